//! Fourier multiplier calculus on the periodic grid.
//!
//! Coefficients follow the Fourier-series convention
//! `c_k = N^{-n} sum_j f(x_j) exp(-i xi.x_j)` with `xi = 2 pi k / L` and
//! `x_j = -L/2 + j h`, so `f(x_j) = sum_k c_k exp(i xi.x_j)` and Parseval reads
//! `h^n sum |f|^2 = L^n sum |c|^2`.
//!
//! First-order symbols (gradient, divergence, Riesz factors inside the Leray
//! projector) use the wavevector with its Nyquist component zeroed; even
//! symbols (heat, Laplacian powers) use the full `|xi|^2`. This keeps every
//! output real and makes `P grad = 0`, `div P = 0` and `P^2 = P` exact.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::io::{fmt17, write_csv};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                let dir = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
                planner.plan_fft(n, dir)
            })
            .clone()
    })
}

/// Unnormalized n-dimensional FFT of one row-major block.
fn fft_nd(buf: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    let fft = plan(n, inverse);
    fft.process(buf);
    let mut scratch = Vec::new();
    for d in (0..dim - 1).rev() {
        let stride = n.pow((dim - 1 - d) as u32);
        let block = n * stride;
        scratch.resize(block, ZERO);
        for chunk in buf.chunks_exact_mut(block) {
            for o in 0..stride {
                for j in 0..n {
                    scratch[o * n + j] = chunk[j * stride + o];
                }
            }
            fft.process(&mut scratch);
            for o in 0..stride {
                for j in 0..n {
                    chunk[j * stride + o] = scratch[o * n + j];
                }
            }
        }
    }
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Visits every lattice mode in storage order with its index vector.
fn for_each_index(grid: &Grid, mut visit: impl FnMut(usize, &[usize])) {
    let mut idx = [0usize; 4];
    for flat in 0..grid.points() {
        visit(flat, &idx[..grid.dim]);
        let mut d = grid.dim;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] < grid.n {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Per-axis wavenumber tables for a grid.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub grid: Grid,
    xi: Vec<f64>,
    xi_eff: Vec<f64>,
}

impl Lattice {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.n;
        let scale = 2.0 * PI / grid.length;
        let xi: Vec<f64> = (0..n).map(|i| scale * signed_index(i, n) as f64).collect();
        let mut xi_eff = xi.clone();
        xi_eff[n / 2] = 0.0;
        Self { grid: *grid, xi, xi_eff }
    }

    /// Calls `visit(flat, xi, xi_eff, |xi|^2)` for every mode.
    pub fn for_each_mode(&self, mut visit: impl FnMut(usize, &[f64], &[f64], f64)) {
        let dim = self.grid.dim;
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        for_each_index(&self.grid, |flat, idx| {
            let mut lam = 0.0;
            for d in 0..dim {
                a[d] = self.xi[idx[d]];
                b[d] = self.xi_eff[idx[d]];
                lam += a[d] * a[d];
            }
            visit(flat, &a[..dim], &b[..dim], lam);
        });
    }

    /// `|xi|^2` for every mode in storage order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.points()];
        self.for_each_mode(|flat, _, _, lam| out[flat] = lam);
        out
    }

    /// Keeps modes with every `|k_d| <= floor((N - 1) / 3)`.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let n = self.grid.n;
        let kmax = ((n - 1) / 3) as i64;
        let mut out = vec![true; self.grid.points()];
        for_each_index(&self.grid, |flat, idx| {
            out[flat] = idx.iter().all(|&i| signed_index(i, n).abs() <= kmax);
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Grid,
    comps: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid, comps: usize) -> Self {
        Self { grid, comps, data: vec![ZERO; comps * grid.points()] }
    }

    pub fn from_data(grid: Grid, comps: usize, data: Vec<Complex64>) -> Result<Self> {
        if comps == 0 || data.len() != comps * grid.points() {
            return Err(Error::Mismatch(format!(
                "{} coefficients for {} components on {}^{} modes",
                data.len(),
                comps,
                grid.n,
                grid.dim
            )));
        }
        Ok(Self { grid, comps, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let p = self.grid.points();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let p = self.grid.points();
        &mut self.data[c * p..(c + 1) * p]
    }

    fn require_vector(&self, what: &str) -> Result<()> {
        if self.comps != self.grid.dim {
            return Err(Error::Shape(format!("{what} needs a vector with {} components, got {}", self.grid.dim, self.comps)));
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &Spectrum) -> Result<()> {
        if self.grid != other.grid || self.comps != other.comps {
            return Err(Error::Mismatch("spectra on different grids or shapes".into()));
        }
        Ok(())
    }

    pub fn axpy(&mut self, s: f64, other: &Spectrum) -> Result<()> {
        self.check_compatible(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b * s);
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Applies a real even symbol `m(|xi|^2)` to every component.
    pub fn apply_radial(&mut self, m: impl Fn(f64) -> f64) {
        let lat = Lattice::new(&self.grid);
        let p = self.grid.points();
        let mut sym = vec![0.0; p];
        lat.for_each_mode(|flat, _, _, lam| sym[flat] = m(lam));
        for chunk in self.data.chunks_exact_mut(p) {
            chunk.iter_mut().zip(&sym).for_each(|(v, s)| *v *= s);
        }
    }

    pub fn heat(&mut self, t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("heat time {t} must be >= 0")));
        }
        self.apply_radial(|lam| (-t * lam).exp());
        Ok(())
    }

    pub fn laplacian(&mut self) {
        self.apply_radial(|lam| -lam);
    }

    /// `(-Δ)^{-s}` with the zero mode sent to zero.
    pub fn inverse_laplacian(&mut self, s: f64) -> Result<()> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::InvalidParameter(format!("inverse Laplacian power {s} outside (0, 1]")));
        }
        self.apply_radial(|lam| if lam > 0.0 { lam.powf(-s) } else { 0.0 });
        Ok(())
    }

    /// `(-Δ)^{alpha}` for `alpha >= 0`.
    pub fn fractional_laplacian(&mut self, alpha: f64) -> Result<()> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("fractional power {alpha} must be >= 0")));
        }
        self.apply_radial(|lam| if lam > 0.0 { lam.powf(alpha) } else if alpha == 0.0 { 1.0 } else { 0.0 });
        Ok(())
    }

    /// Leray projection; the mean mode passes through unchanged.
    pub fn project(&mut self) -> Result<()> {
        self.require_vector("Leray projection")?;
        let dim = self.grid.dim;
        let p = self.grid.points();
        let lat = Lattice::new(&self.grid);
        let data = &mut self.data;
        lat.for_each_mode(|flat, _, xt, _| {
            let k2: f64 = xt.iter().map(|x| x * x).sum();
            if k2 == 0.0 {
                return;
            }
            let mut dot = ZERO;
            for d in 0..dim {
                dot += data[d * p + flat] * xt[d];
            }
            let dot = dot / k2;
            for d in 0..dim {
                data[d * p + flat] -= dot * xt[d];
            }
        });
        Ok(())
    }

    pub fn dealias(&mut self) {
        let mask = Lattice::new(&self.grid).dealias_mask();
        let p = self.grid.points();
        for chunk in self.data.chunks_exact_mut(p) {
            chunk.iter_mut().zip(&mask).for_each(|(v, &keep)| {
                if !keep {
                    *v = ZERO;
                }
            });
        }
    }

    /// Gradient of every component; component `c` of the input yields
    /// output components `c * n + k` holding `∂_k`.
    pub fn gradient(&self) -> Spectrum {
        let dim = self.grid.dim;
        let p = self.grid.points();
        let mut out = Spectrum::zeros(self.grid, self.comps * dim);
        let lat = Lattice::new(&self.grid);
        lat.for_each_mode(|flat, _, xt, _| {
            for c in 0..self.comps {
                let v = self.data[c * p + flat];
                for k in 0..dim {
                    out.data[(c * dim + k) * p + flat] = I * xt[k] * v;
                }
            }
        });
        out
    }

    pub fn divergence(&self) -> Result<Spectrum> {
        self.require_vector("divergence")?;
        let p = self.grid.points();
        let mut out = Spectrum::zeros(self.grid, 1);
        Lattice::new(&self.grid).for_each_mode(|flat, _, xt, _| {
            let mut acc = ZERO;
            for (d, x) in xt.iter().enumerate() {
                acc += I * x * self.data[d * p + flat];
            }
            out.data[flat] = acc;
        });
        Ok(out)
    }

    /// `(∇·T)_m = Σ_k ∂_k T_{km}` for a tensor stored at `k * n + m`.
    pub fn tensor_divergence(&self) -> Result<Spectrum> {
        let dim = self.grid.dim;
        if self.comps != dim * dim {
            return Err(Error::Shape(format!("tensor divergence needs {} components", dim * dim)));
        }
        let p = self.grid.points();
        let mut out = Spectrum::zeros(self.grid, dim);
        Lattice::new(&self.grid).for_each_mode(|flat, _, xt, _| {
            for m in 0..dim {
                let mut acc = ZERO;
                for k in 0..dim {
                    acc += I * xt[k] * self.data[(k * dim + m) * p + flat];
                }
                out.data[m * p + flat] = acc;
            }
        });
        Ok(out)
    }
}

/// Forward transform.
pub fn forward(f: &Field) -> Spectrum {
    let grid = *f.grid();
    let p = grid.points();
    let comps = f.comps();
    let mut data = vec![ZERO; comps * p];
    let mut c = 0;
    // two real components share one complex transform
    while c < comps {
        let pair = c + 1 < comps;
        let mut buf: Vec<Complex64> = if pair {
            f.component(c).iter().zip(f.component(c + 1)).map(|(&a, &b)| Complex64::new(a, b)).collect()
        } else {
            f.component(c).iter().map(|&a| Complex64::new(a, 0.0)).collect()
        };
        fft_nd(&mut buf, grid.n, grid.dim, false);
        let norm = 1.0 / p as f64;
        let n = grid.n;
        let mut strides = [0usize; 4];
        for d in 0..grid.dim {
            strides[d] = n.pow((grid.dim - 1 - d) as u32);
        }
        for_each_index(&grid, |flat, idx| {
            let parity = idx.iter().sum::<usize>() % 2;
            let sign = if parity == 0 { norm } else { -norm };
            if pair {
                let mirror: usize = idx.iter().enumerate().map(|(d, &i)| ((n - i) % n) * strides[d]).sum();
                let z = buf[flat];
                let zm = buf[mirror].conj();
                data[c * p + flat] = (z + zm) * (0.5 * sign);
                data[(c + 1) * p + flat] = (z - zm) * Complex64::new(0.0, -0.5 * sign);
            } else {
                data[c * p + flat] = buf[flat] * sign;
            }
        });
        c += if pair { 2 } else { 1 };
    }
    Spectrum { grid, comps, data }
}

/// Inverse transform; the spectrum is assumed conjugate symmetric and only
/// the real part is kept.
pub fn inverse(s: &Spectrum) -> Field {
    let grid = s.grid;
    let p = grid.points();
    let mut out = vec![0.0; s.comps * p];
    let mut parity = vec![false; p];
    for_each_index(&grid, |flat, idx| parity[flat] = idx.iter().sum::<usize>() % 2 == 1);
    let mut c = 0;
    while c < s.comps {
        let pair = c + 1 < s.comps;
        let mut buf: Vec<Complex64> = (0..p)
            .map(|i| {
                let mut z = s.data[c * p + i];
                if pair {
                    z += I * s.data[(c + 1) * p + i];
                }
                if parity[i] {
                    -z
                } else {
                    z
                }
            })
            .collect();
        fft_nd(&mut buf, grid.n, grid.dim, true);
        for i in 0..p {
            out[c * p + i] = buf[i].re;
            if pair {
                out[(c + 1) * p + i] = buf[i].im;
            }
        }
        c += if pair { 2 } else { 1 };
    }
    Field::from_raw(grid, s.comps, out)
}

/// Inverse transform checked against the expected grid and shape.
pub fn inverse_checked(s: &Spectrum, grid: &Grid, comps: usize) -> Result<Field> {
    if s.grid != *grid || s.comps != comps {
        return Err(Error::Mismatch("spectrum metadata does not match the requested field".into()));
    }
    Ok(inverse(s))
}

pub fn heat_semigroup(f: &Field, t: f64) -> Result<Field> {
    let mut s = forward(f);
    s.heat(t)?;
    Ok(inverse(&s))
}

pub fn leray_project(u: &Field) -> Result<Field> {
    if !u.is_vector() {
        return Err(Error::Shape("Leray projection needs a vector field".into()));
    }
    let mut s = forward(u);
    s.project()?;
    Ok(inverse(&s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Differential {
    Gradient,
    Divergence,
    Laplacian,
}

pub fn differential(f: &Field, kind: Differential) -> Result<Field> {
    let s = forward(f);
    let out = match kind {
        Differential::Gradient => {
            if f.comps() != 1 {
                return Err(Error::Shape("gradient needs a scalar field".into()));
            }
            s.gradient()
        }
        Differential::Divergence => s.divergence()?,
        Differential::Laplacian => {
            let mut s = s;
            s.laplacian();
            s
        }
    };
    Ok(inverse(&out))
}

/// Full gradient `∂_k u_c` stored at `c * n + k`.
pub fn gradient_tensor(u: &Field) -> Field {
    inverse(&forward(u).gradient())
}

pub fn inverse_laplacian(f: &Field, s: f64) -> Result<Field> {
    let mut sp = forward(f);
    sp.inverse_laplacian(s)?;
    Ok(inverse(&sp))
}

pub fn fractional_laplacian(f: &Field, alpha: f64) -> Result<Field> {
    let mut sp = forward(f);
    sp.fractional_laplacian(alpha)?;
    Ok(inverse(&sp))
}

/// Dealiased pointwise products of two vector spectra.
///
/// Returns the physical-space factors after 2/3 truncation.
fn dealiased_factors(u: &Spectrum, v: &Spectrum) -> (Field, Field) {
    let mut a = u.clone();
    a.dealias();
    let mut b = v.clone();
    b.dealias();
    (inverse(&a), inverse(&b))
}

/// Spectrum of `u ⊗ v` (components `k * n + m` hold `u_k v_m`), dealiased.
pub fn tensor_spectrum(u: &Spectrum, v: &Spectrum) -> Result<Spectrum> {
    u.require_vector("tensor product")?;
    v.require_vector("tensor product")?;
    if u.grid != v.grid {
        return Err(Error::Mismatch("tensor product of fields on different grids".into()));
    }
    let dim = u.grid.dim;
    let (uf, vf) = dealiased_factors(u, v);
    let prod = Field::from_fn_components(u.grid, dim * dim, |c, out| {
        let (k, m) = (c / dim, c % dim);
        out.iter_mut()
            .zip(uf.component(k).iter().zip(vf.component(m)))
            .for_each(|(o, (a, b))| *o = a * b);
    });
    let mut s = forward(&prod);
    s.dealias();
    Ok(s)
}

/// Spectrum of `(u·∇)v`, dealiased.
pub fn convective_spectrum(u: &Spectrum, v: &Spectrum) -> Result<Spectrum> {
    u.require_vector("convective term")?;
    v.require_vector("convective term")?;
    if u.grid != v.grid {
        return Err(Error::Mismatch("convective term of fields on different grids".into()));
    }
    let dim = u.grid.dim;
    let mut a = u.clone();
    a.dealias();
    let mut b = v.clone();
    b.dealias();
    let uf = inverse(&a);
    let grad = inverse(&b.gradient());
    let prod = Field::from_fn_components(u.grid, dim, |m, out| {
        for k in 0..dim {
            let gk = grad.component(m * dim + k);
            out.iter_mut().zip(uf.component(k).iter().zip(gk)).for_each(|(o, (x, g))| *o += x * g);
        }
    });
    let mut s = forward(&prod);
    s.dealias();
    Ok(s)
}

/// Spectrum of `(∇·u) v`, dealiased.
pub fn divergence_product_spectrum(u: &Spectrum, v: &Spectrum) -> Result<Spectrum> {
    let mut a = u.clone();
    a.dealias();
    let div = inverse(&a.divergence()?);
    let mut b = v.clone();
    b.dealias();
    let vf = inverse(&b);
    let dim = u.grid.dim;
    let prod = Field::from_fn_components(u.grid, dim, |m, out| {
        out.iter_mut().zip(div.component(0).iter().zip(vf.component(m))).for_each(|(o, (d, x))| *o = d * x);
    });
    let mut s = forward(&prod);
    s.dealias();
    Ok(s)
}

pub fn convective(u: &Field, v: &Field) -> Result<Field> {
    Ok(inverse(&convective_spectrum(&forward(u), &forward(v))?))
}

/// Pressure with `∇π = (I - P)(f - (u·∇)u)` and zero mean.
pub fn pressure_recover(u: &Field, f: &Field) -> Result<Field> {
    if !u.is_vector() || !f.is_vector() {
        return Err(Error::Shape("pressure recovery needs vector u and f".into()));
    }
    u.check_compatible(f)?;
    let us = forward(u);
    let mut h = forward(f);
    h.axpy(-1.0, &convective_spectrum(&us, &us)?)?;
    let grid = *u.grid();
    let p = grid.points();
    let mut pi = Spectrum::zeros(grid, 1);
    Lattice::new(&grid).for_each_mode(|flat, _, xt, _| {
        let k2: f64 = xt.iter().map(|x| x * x).sum();
        if k2 == 0.0 {
            return;
        }
        let mut dot = ZERO;
        for (d, x) in xt.iter().enumerate() {
            dot += h.data[d * p + flat] * x;
        }
        pi.data[flat] = -I * dot / k2;
    });
    Ok(inverse(&pi))
}

/// Maximum modulus of the spectral divergence.
pub fn divergence_max(u: &Field) -> Result<f64> {
    Ok(inverse(&forward(u).divergence()?).max_abs())
}

/// Writes the little-endian binary format: `n, N, L, c` then samples.
pub fn write_field<W: Write>(mut w: W, f: &Field) -> Result<()> {
    let g = f.grid();
    w.write_all(&(g.dim as u64).to_le_bytes())?;
    w.write_all(&(g.n as u64).to_le_bytes())?;
    w.write_all(&g.length.to_le_bytes())?;
    w.write_all(&(f.comps() as u64).to_le_bytes())?;
    for v in f.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<Field> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)?;
        Ok(word)
    };
    let dim = u64::from_le_bytes(next(&mut r)?) as usize;
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let length = f64::from_le_bytes(next(&mut r)?);
    let comps = u64::from_le_bytes(next(&mut r)?) as usize;
    let grid = Grid::new(dim, n, length)?;
    if comps == 0 || comps > dim * dim {
        return Err(Error::Shape(format!("component count {comps} in header")));
    }
    let mut bytes = vec![0u8; comps * grid.points() * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Field::from_data(grid, comps, data)
}

/// Samples along `axis` through the grid point at the origin.
pub fn write_slice_csv<W: Write>(w: W, f: &Field, axis: usize) -> Result<()> {
    let g = *f.grid();
    if axis >= g.dim {
        return Err(Error::InvalidParameter(format!("axis {axis} >= dimension {}", g.dim)));
    }
    let n = g.n;
    let stride = n.pow((g.dim - 1 - axis) as u32);
    let center: usize = (0..g.dim).filter(|&d| d != axis).map(|d| (n / 2) * n.pow((g.dim - 1 - d) as u32)).sum();
    let mut header = vec!["x".to_string()];
    header.extend((0..f.comps()).map(|c| format!("c{c}")));
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = (0..n).map(|i| {
        let flat = center + i * stride;
        let mut row = vec![fmt17(g.coord(i))];
        row.extend((0..f.comps()).map(|c| fmt17(f.component(c)[flat])));
        row
    });
    write_csv(w, &header, rows)
}

impl Field {
    /// Builds a field component by component; `fill(c, out)` writes one
    /// zero-initialised block of `N^n` samples.
    pub(crate) fn from_fn_components(grid: Grid, comps: usize, mut fill: impl FnMut(usize, &mut [f64])) -> Field {
        let mut f = Field::zeros(grid, comps);
        for c in 0..comps {
            fill(c, f.component_mut(c));
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, l: f64) -> Grid {
        Grid::new(3, n, l).unwrap()
    }

    fn rel_diff(a: &Field, b: &Field) -> f64 {
        a.sub(b).unwrap().max_abs() / a.max_abs().max(b.max_abs()).max(1e-300)
    }

    fn random_field(g: Grid, comps: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..comps * g.points()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::from_data(g, comps, data).unwrap()
    }

    /// Sum of a few random low Fourier modes per component.
    fn smooth_field(g: Grid, comps: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = 2.0 * PI / g.length;
        let modes: Vec<Vec<([f64; 3], f64, f64)>> = (0..comps)
            .map(|_| {
                (0..5)
                    .map(|_| {
                        let k = [rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64];
                        (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3))
                    })
                    .collect()
            })
            .collect();
        Field::from_fn(g, comps, |x, out| {
            for (c, ms) in modes.iter().enumerate() {
                out[c] = ms.iter().map(|(k, a, ph)| a * (w * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]) + ph).cos()).sum();
            }
        })
        .unwrap()
    }

    #[test]
    fn constant_has_only_mean_mode() {
        let g = grid(8, 3.0);
        let s = forward(&Field::scalar(g, |_| 2.5).unwrap());
        assert!((s.data()[0] - Complex64::new(2.5, 0.0)).norm() < 1e-14);
        assert!(s.data()[1..].iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn cosine_has_two_modes() {
        let g = grid(8, 3.0);
        let f = Field::scalar(g, |x| (2.0 * PI * x[0] / 3.0).cos()).unwrap();
        let s = forward(&f);
        let e1 = 64; // k = +e1
        let em1 = 7 * 64; // k = -e1
        for (i, z) in s.data().iter().enumerate() {
            if i == e1 || i == em1 {
                assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-14);
            } else {
                assert!(z.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let g = grid(16, 5.0);
        for comps in [1, 3] {
            let f = random_field(g, comps, 7);
            let s = forward(&f);
            assert!(rel_diff(&inverse(&s), &f) < 1e-12);
            let lhs = f.l2_norm().powi(2);
            let rhs = g.length.powi(3) * s.data().iter().map(|z| z.norm_sqr()).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-12 * lhs);
        }
    }

    #[test]
    fn inverse_checks_metadata() {
        let g = grid(8, 1.0);
        let s = Spectrum::zeros(g, 3);
        assert!(inverse_checked(&s, &g, 1).is_err());
        assert!(inverse_checked(&s, &grid(8, 2.0), 3).is_err());
        assert!(Spectrum::from_data(g, 3, vec![ZERO; 10]).is_err());
    }

    #[test]
    fn heat_identity_semigroup_and_mean() {
        let g = grid(16, 6.0);
        let f = random_field(g, 1, 3);
        assert!(rel_diff(&heat_semigroup(&f, 0.0).unwrap(), &f) < 1e-13);
        let ab = heat_semigroup(&heat_semigroup(&f, 0.1).unwrap(), 0.25).unwrap();
        let direct = heat_semigroup(&f, 0.35).unwrap();
        assert!(rel_diff(&ab, &direct) < 1e-12);
        assert!((direct.mean(0) - f.mean(0)).abs() < 1e-14);
        assert!(heat_semigroup(&f, -1e-3).is_err());
    }

    #[test]
    fn heat_of_gaussian_matches_closed_form() {
        let (sigma, t) = (0.3, 0.5);
        let l = 20.0 * (sigma + t as f64).sqrt();
        let g = grid(64, l);
        let gauss = |x: &[f64], s: f64| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (4.0 * s)).exp();
        let f = Field::scalar(g, |x| gauss(x, sigma)).unwrap();
        let got = heat_semigroup(&f, t).unwrap();
        let want = Field::scalar(g, |x| (sigma / (sigma + t)).powf(1.5) * gauss(x, sigma + t)).unwrap();
        assert!(got.sub(&want).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn heat_preserves_positivity() {
        let g = grid(16, 4.0);
        let f = Field::scalar(g, |x| if x[0].abs() < 0.5 && x[1] > 0.0 { 1.0 } else { 0.0 }).unwrap();
        // the truncated kernel is positive once e^{-t ξ_max^2} is negligible
        let h = heat_semigroup(&f, 0.3).unwrap();
        assert!(h.data().iter().all(|&v| v >= -1e-10 * h.max_abs()));
    }

    #[test]
    fn projection_kills_gradients_and_keeps_curls() {
        let g = grid(16, 2.0 * PI);
        let phi = smooth_field(g, 1, 11);
        let grad = differential(&phi, Differential::Gradient).unwrap();
        assert!(leray_project(&grad).unwrap().max_abs() <= 1e-10 * grad.max_abs());

        let psi = smooth_field(g, 1, 12);
        let gp = gradient_tensor(&psi);
        let mut curl = Field::zeros(g, 3);
        curl.component_mut(0).iter_mut().zip(gp.component(1)).for_each(|(o, d)| *o = -d);
        curl.component_mut(1).copy_from_slice(gp.component(0));
        assert!(rel_diff(&leray_project(&curl).unwrap(), &curl) < 1e-12);

        let shear = Field::from_fn(g, 3, |x, o| o[0] = x[1].sin()).unwrap();
        assert!(rel_diff(&leray_project(&shear).unwrap(), &shear) < 1e-12);
        assert!(leray_project(&phi).is_err());
    }

    #[test]
    fn differential_identities() {
        let g = grid(16, 4.0);
        let f = Field::scalar(g, |x| (2.0 * PI * x[0] / 4.0).cos()).unwrap();
        let gr = differential(&f, Differential::Gradient).unwrap();
        let want = Field::from_fn(g, 3, |x, o| o[0] = -(2.0 * PI / 4.0) * (2.0 * PI * x[0] / 4.0).sin()).unwrap();
        assert!(gr.sub(&want).unwrap().max_abs() < 1e-13);

        let c = Field::scalar(g, |_| 3.0).unwrap();
        assert!(differential(&c, Differential::Laplacian).unwrap().max_abs() < 1e-13);

        let s = smooth_field(g, 1, 5);
        let dg = differential(&differential(&s, Differential::Gradient).unwrap(), Differential::Divergence).unwrap();
        let lap = differential(&s, Differential::Laplacian).unwrap();
        assert!(rel_diff(&dg, &lap) < 1e-12);

        assert!(differential(&s, Differential::Divergence).is_err());
        assert!(differential(&gr, Differential::Gradient).is_err());
    }

    #[test]
    fn inverse_laplacian_cases() {
        let l = 3.0;
        let g = grid(16, l);
        let f = Field::scalar(g, |x| (2.0 * PI * x[0] / l).cos()).unwrap();
        let want = f.scale((l / (2.0 * PI)).powi(2));
        assert!(rel_diff(&inverse_laplacian(&f, 1.0).unwrap(), &want) < 1e-13);
        assert!(inverse_laplacian(&Field::scalar(g, |_| 1.0).unwrap(), 1.0).unwrap().max_abs() < 1e-15);

        let r = random_field(g, 1, 2);
        let back = differential(&inverse_laplacian(&r, 1.0).unwrap(), Differential::Laplacian).unwrap().scale(-1.0);
        let mean = r.mean(0);
        let centered = Field::from_data(g, 1, r.data().iter().map(|v| v - mean).collect()).unwrap();
        assert!(rel_diff(&back, &centered) < 1e-12);
        assert!(inverse_laplacian(&r, 0.0).is_err());
        assert!(inverse_laplacian(&r, 1.5).is_err());
    }

    #[test]
    fn smoothing_rate_constant_is_stable() {
        // ‖(-Δ)^{1/2} e^{tΔ} f‖ ≤ C t^{-1/2} ‖f‖: C(t) is the max over a probe
        // family holding random fields and the lattice mode nearest the
        // continuum maximiser |ξ|^2 = 1/(2t).
        let l = 4.0 * PI;
        let g = grid(64, l);
        let probes: Vec<Field> = (0..2).map(|s| random_field(g, 1, 100 + s)).collect();
        let unit = 2.0 * PI / l;
        let rate = |f: &Field, t: f64| {
            let mut s = forward(f);
            s.heat(t).unwrap();
            s.fractional_laplacian(0.5).unwrap();
            t.sqrt() * inverse(&s).l2_norm() / f.l2_norm()
        };
        let mut cs = Vec::new();
        for i in 0..7 {
            let t = 1e-3 * 10f64.powf(i as f64 * 0.5);
            let target = 1.0 / (2.0 * t) / (unit * unit);
            let mut best = (f64::INFINITY, [0.0; 3]);
            for a in 0..32 {
                for b in 0..=a {
                    for c in 0..=b {
                        let k2 = (a * a + b * b + c * c) as f64;
                        if k2 > 0.0 && (k2 - target).abs() < best.0 {
                            best = ((k2 - target).abs(), [a as f64, b as f64, c as f64]);
                        }
                    }
                }
            }
            let k = best.1;
            let mode = Field::scalar(g, |x| (unit * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2])).cos()).unwrap();
            let worst = probes.iter().chain(std::iter::once(&mode)).map(|f| rate(f, t)).fold(0.0, f64::max);
            cs.push(worst);
        }
        let c = cs.iter().cloned().fold(0.0, f64::max);
        let sup = (0.5f64 / std::f64::consts::E).sqrt();
        assert!(c <= sup * (1.0 + 1e-12));
        assert!(cs.iter().all(|&v| v >= 0.9 * c), "{cs:?}");
    }

    #[test]
    fn pressure_of_gradient_force() {
        let g = grid(16, 2.0 * PI);
        let phi = smooth_field(g, 1, 21);
        let f = differential(&phi, Differential::Gradient).unwrap();
        let pi = pressure_recover(&Field::zeros(g, 3), &f).unwrap();
        let mean = phi.mean(0);
        let want = Field::from_data(g, 1, phi.data().iter().map(|v| v - mean).collect()).unwrap();
        assert!(pi.sub(&want).unwrap().max_abs() <= 1e-10 * want.max_abs());
    }

    #[test]
    fn pressure_of_single_mode_and_solenoidal_force() {
        let g = grid(16, 2.0 * PI);
        let u = Field::from_fn(g, 3, |x, o| {
            o[0] = x[1].sin() + 0.5 * x[2].cos();
            o[1] = x[0].sin();
        })
        .unwrap();
        let conv = convective(&u, &u).unwrap();
        // direct multiplier: π̂ = -i ξ·ĥ/|ξ|^2 with h = -(u·∇)u
        let want = inverse_laplacian(&differential(&conv, Differential::Divergence).unwrap(), 1.0).unwrap();
        let pi = pressure_recover(&u, &Field::zeros(g, 3)).unwrap();
        assert!(pi.sub(&want).unwrap().max_abs() <= 1e-10 * want.max_abs().max(1.0));
        // ∇π equals the gradient part of h
        let h = conv.scale(-1.0);
        let gp = differential(&pi, Differential::Gradient).unwrap();
        let gradpart = h.sub(&leray_project(&h).unwrap()).unwrap();
        assert!(rel_diff(&gp, &gradpart) < 1e-10);

        let fsol = leray_project(&smooth_field(g, 3, 4)).unwrap();
        let with_f = pressure_recover(&u, &fsol.add(&Field::zeros(g, 3)).unwrap()).unwrap();
        assert!(with_f.sub(&pi).unwrap().max_abs() <= 1e-10 * pi.max_abs().max(1.0));
    }

    #[test]
    fn dealias_mask_counts() {
        let lat = Lattice::new(&grid(32, 1.0));
        // |k| <= 10 per axis
        assert_eq!(lat.dealias_mask().iter().filter(|&&b| b).count(), 21usize.pow(3));
    }

    #[test]
    fn convective_and_divergence_forms() {
        let g = grid(16, 2.0 * PI);
        let u = smooth_field(g, 3, 31);
        let v = smooth_field(g, 3, 32);
        let (us, vs) = (forward(&u), forward(&v));
        // ∇·(u⊗v) = (u·∇)v + (∇·u)v, exact for band-limited data
        let lhs = tensor_spectrum(&us, &vs).unwrap().tensor_divergence().unwrap();
        let mut rhs = convective_spectrum(&us, &vs).unwrap();
        rhs.axpy(1.0, &divergence_product_spectrum(&us, &vs).unwrap()).unwrap();
        assert!(rel_diff(&inverse(&lhs), &inverse(&rhs)) < 1e-10);
    }

    #[test]
    fn binary_round_trip_and_slice() {
        let g = grid(8, 2.0);
        let f = random_field(g, 3, 9);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 3 * 512);
        assert_eq!(&buf[..8], &3u64.to_le_bytes());
        assert_eq!(read_field(&buf[..]).unwrap(), f);
        assert!(read_field(&buf[..100]).is_err());

        let mut csv = Vec::new();
        write_slice_csv(&mut csv, &f, 0).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("x,c0,c1,c2"));
    }

    fn probe_vec() -> impl Strategy<Value = u64> {
        any::<u64>()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projector_identities(seed in probe_vec()) {
            let g = grid(8, 3.0);
            let u = random_field(g, 3, seed);
            let pu = leray_project(&u).unwrap();
            prop_assert!(rel_diff(&leray_project(&pu).unwrap(), &pu) < 1e-12);
            prop_assert!(divergence_max(&pu).unwrap() <= 1e-10 * u.max_abs());
            let hp = heat_semigroup(&pu, 0.07).unwrap();
            let ph = leray_project(&heat_semigroup(&u, 0.07).unwrap()).unwrap();
            prop_assert!(rel_diff(&hp, &ph) < 1e-12);
        }

        #[test]
        fn transforms_are_linear(seed in probe_vec(), a in -5.0f64..5.0) {
            let g = grid(8, 1.5);
            let f = random_field(g, 1, seed);
            let h = random_field(g, 1, seed ^ 0xdead);
            let mut combo = f.clone();
            combo.axpy(a, &h).unwrap();
            let mut s = forward(&f);
            s.axpy(a, &forward(&h)).unwrap();
            prop_assert!(rel_diff(&inverse(&s), &combo) < 1e-12);
        }
    }
}
