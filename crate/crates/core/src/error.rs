use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite sample at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("metadata mismatch: {0}")]
    Mismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("time {0} is not a grid node")]
    NotANode(f64),
    #[error("refused: {quantity} = {measured:.6e} exceeds threshold {threshold:.6e} ({detail})")]
    Refused {
        quantity: String,
        measured: f64,
        threshold: f64,
        detail: String,
    },
    #[error("iteration did not reach tolerance {tol:.3e} after {} sweeps; last difference {last:.3e}", diffs.len())]
    Diverged { tol: f64, last: f64, diffs: Vec<f64> },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
