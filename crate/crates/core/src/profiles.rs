//! Reference data: mollified homogeneous profiles, smooth bumps and
//! low-mode solenoidal fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::spectral::{forward, inverse, leray_project};

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Kummer's `M(a, b, -z)` for `z >= 0`.
fn kummer_negative(a: f64, b: f64, z: f64) -> f64 {
    if z < 40.0 {
        // e^{-z} M(b - a, b, z): all terms positive
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        while term > 1e-17 * sum {
            term *= (b - a + k) * z / ((b + k) * (k + 1.0));
            sum += term;
            k += 1.0;
        }
        (-z).exp() * sum
    } else {
        let lead = libm::tgamma(b) / libm::tgamma(b - a) * z.powf(-a);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..30 {
            let k = k as f64;
            let next = term * (a + k) * (1.0 + a - b + k) / ((k + 1.0) * z);
            if next.abs() >= term.abs() || next == 0.0 {
                break;
            }
            term = next;
            sum += term;
        }
        lead * sum
    }
}

/// `e^{σΔ}|x|^{-α}` in `n` dimensions, `0 < α < n`.
pub fn heat_mollified_power(x: &[f64], alpha: f64, sigma: f64) -> f64 {
    let n = x.len() as f64;
    let z = radius(x).powi(2) / (4.0 * sigma);
    libm::tgamma((n - alpha) / 2.0) / libm::tgamma(n / 2.0) * (4.0 * sigma).powf(-alpha / 2.0) * kummer_negative(alpha / 2.0, n / 2.0, z)
}

/// Scalar `e^{σΔ}|x|^{-α}` sampled on the grid.
pub fn mollified_power_field(grid: Grid, alpha: f64, sigma: f64) -> Result<Field> {
    if !(alpha > 0.0 && alpha < grid.dim as f64 && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("need 0 < alpha < n and sigma > 0, got {alpha}, {sigma}")));
    }
    Field::scalar(grid, |x| heat_mollified_power(x, alpha, sigma))
}

/// Default mollification: Gaussian e-folding length `2h`, i.e. `σ = h^2`.
pub fn grid_sigma(grid: &Grid) -> f64 {
    grid.spacing().powi(2)
}

pub fn bump(grid: Grid, width: f64) -> Result<Field> {
    Field::scalar(grid, |x| (-radius(x).powi(2) / (width * width)).exp())
}

/// Solenoidal field `curl(bump · w)`, compactly concentrated, 3-D only.
pub fn curl_bump(grid: Grid, width: f64, w: [f64; 3]) -> Result<Field> {
    if grid.dim != 3 {
        return Err(Error::InvalidParameter("curl profile needs n = 3".into()));
    }
    let s = 1.0 / (width * width);
    let u = Field::from_fn(grid, 3, |x, o| {
        let b = (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * s).exp();
        let g = [-2.0 * s * x[0] * b, -2.0 * s * x[1] * b, -2.0 * s * x[2] * b];
        o[0] = g[1] * w[2] - g[2] * w[1];
        o[1] = g[2] * w[0] - g[0] * w[2];
        o[2] = g[0] * w[1] - g[1] * w[0];
    })?;
    // sampling leaves an aliasing-level divergence; remove it exactly
    leray_project(&u)
}

/// Leray projection of `scalar · e_axis`.
pub fn projected_along(scalar: &Field, axis: usize) -> Result<Field> {
    leray_project(&scalar.scalar_to_vector(axis)?)
}

/// Band-limited solenoidal field with a few low modes (n = 3).
pub fn low_mode_flow(grid: Grid, amplitude: f64) -> Result<Field> {
    let w = 2.0 * std::f64::consts::PI / grid.length;
    let u = Field::from_fn(grid, grid.dim, |x, o| {
        let (a, b, c) = (w * x[0], w * x[1], w * x[2]);
        o[0] = a.sin() * b.cos() * c.cos() + 0.3 * (b + 0.4).sin();
        o[1] = -a.cos() * b.sin() * c.cos() + 0.2 * (2.0 * c).cos();
        o[2] = 0.25 * (a - 0.3).cos();
    })?;
    Ok(leray_project(&u)?.scale(amplitude))
}

/// Solenoidal field with random low modes, `|k|_inf <= kmax`, with spectral
/// weight `(1 + |k|^2)^{-decay}`.
pub fn random_solenoidal(grid: Grid, seed: u64, kmax: i64, decay: f64) -> Result<Field> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = 2.0 * std::f64::consts::PI / grid.length;
    let mut modes = Vec::new();
    for _ in 0..8 {
        let k: Vec<f64> = (0..grid.dim).map(|_| rng.gen_range(-kmax..=kmax) as f64).collect();
        let k2: f64 = k.iter().map(|v| v * v).sum();
        let amp: Vec<f64> = (0..grid.dim).map(|_| rng.gen_range(-1.0..1.0) * (1.0 + k2).powf(-decay)).collect();
        modes.push((k, amp, rng.gen_range(0.0..std::f64::consts::TAU)));
    }
    let u = Field::from_fn(grid, grid.dim, |x, o| {
        for (k, amp, ph) in &modes {
            let arg = w * k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph;
            let c = arg.cos();
            for d in 0..o.len() {
                o[d] += amp[d] * c;
            }
        }
    })?;
    let mut s = forward(&u);
    s.project()?;
    let out = inverse(&s);
    let m = out.max_abs();
    Ok(if m > 0.0 { out.scale(1.0 / m) } else { out })
}

/// Profiles of the membership catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogueProfile {
    SmoothBump,
    FarFieldInverse,
    GlobalInverse,
    CheckerboardInverse,
}

impl CatalogueProfile {
    pub const ALL: [CatalogueProfile; 4] = [
        CatalogueProfile::SmoothBump,
        CatalogueProfile::FarFieldInverse,
        CatalogueProfile::GlobalInverse,
        CatalogueProfile::CheckerboardInverse,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::SmoothBump => "smooth_bump",
            Self::FarFieldInverse => "far_field_inverse",
            Self::GlobalInverse => "global_inverse",
            Self::CheckerboardInverse => "checkerboard_inverse",
        }
    }

    /// Scalar profile `g` whose projection `P(g e_1)` is the catalogue field;
    /// `None` for the curl bump, which is not of that form.
    pub fn scalar(&self, grid: Grid) -> Result<Option<Field>> {
        let sigma = grid_sigma(&grid);
        let h = grid.spacing();
        Ok(Some(match self {
            Self::SmoothBump => return Ok(None),
            Self::FarFieldInverse => mollified_power_field(grid, 1.0, 1.0)?,
            Self::GlobalInverse => mollified_power_field(grid, 1.0, sigma)?,
            Self::CheckerboardInverse => Field::scalar(grid, |x| {
                let sign: f64 = x.iter().map(|v| (v / (2.0 * h)).tanh()).product();
                sign * heat_mollified_power(x, 1.0, sigma)
            })?,
        }))
    }

    /// Solenoidal vector field for the profile (n = 3).
    pub fn field(&self, grid: Grid) -> Result<Field> {
        match self.scalar(grid)? {
            Some(g) => projected_along(&g, 0),
            None => curl_bump(grid, 1.0, [1.0, 0.5, 0.2]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_radius_mollifier_is_erf_profile() {
        for sigma in [0.01, 0.3, 2.0] {
            for r in [0.0, 0.05, 0.4, 1.3, 7.0, 30.0] {
                let x = [r, 0.0, 0.0];
                let got = heat_mollified_power(&x, 1.0, sigma);
                let want = if r == 0.0 {
                    1.0 / (std::f64::consts::PI * sigma).sqrt()
                } else {
                    libm::erf(r / (2.0 * sigma.sqrt())) / r
                };
                assert!((got / want - 1.0).abs() < 1e-12, "sigma {sigma} r {r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn far_field_matches_power() {
        for alpha in [0.5, 1.0, 1.5, 2.0] {
            let x = [40.0, 3.0, -2.0];
            let r = radius(&x);
            let sigma = 0.5;
            let z = r * r / (4.0 * sigma);
            let got = heat_mollified_power(&x, alpha, sigma) * r.powf(alpha);
            // first asymptotic correction of M(a, b, -z)
            let want = 1.0 + (alpha / 2.0) * (1.0 + alpha / 2.0 - 1.5) / z;
            assert!((got - want).abs() < 1e-5, "alpha {alpha}: {got} vs {want}");
        }
    }

    #[test]
    fn series_and_asymptotic_agree_at_switch() {
        for (a, b) in [(0.5, 1.5), (0.75, 1.5), (1.0, 2.0)] {
            let lo = kummer_negative(a, b, 40.0 - 1e-9);
            let hi = kummer_negative(a, b, 40.0);
            assert!((lo / hi - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn catalogue_fields_are_solenoidal() {
        let g = Grid::new(3, 16, 8.0).unwrap();
        for p in CatalogueProfile::ALL {
            let f = p.field(g).unwrap();
            assert!(crate::spectral::divergence_max(&f).unwrap() <= 1e-10 * f.max_abs());
        }
        let u = low_mode_flow(Grid::new(3, 16, 6.283185307179586).unwrap(), 1.0).unwrap();
        assert!(crate::spectral::divergence_max(&u).unwrap() <= 1e-12);
        let r = random_solenoidal(g, 4, 3, 1.0).unwrap();
        assert!((r.max_abs() - 1.0).abs() < 1e-14);
    }
}
