//! Pseudospectral laboratory for Navier-Stokes mild solutions in weak
//! Lebesgue spaces on a periodic stand-in for `R^n`.

pub mod criteria;
pub mod duhamel;
pub mod error;
pub mod field;
pub mod harness;
pub mod io;
pub mod lorentz;
pub mod picard;
pub mod profiles;
pub mod spectral;
pub mod subspace;

pub use error::{Error, Result};
pub use field::{Field, Grid};
