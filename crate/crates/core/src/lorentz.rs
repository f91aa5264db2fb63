//! Discrete Lorentz-space calculus on grid fields.
//!
//! Everything is computed from the decreasing rearrangement: with magnitudes
//! sorted as `m_1 >= m_2 >= ...` and `mu_k = k h^n`, the distribution function
//! of `|f|` is the step function equal to `mu_k` on `[m_{k+1}, m_k)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::io::{fmt17, write_csv};

#[derive(Debug, Clone, PartialEq)]
pub struct Rearrangement {
    pub magnitudes: Vec<f64>,
    pub cell_volume: f64,
}

impl Rearrangement {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn measure(&self, k: usize) -> f64 {
        k as f64 * self.cell_volume
    }

    /// Discrete L^1 norm, `sum m_k h^n`.
    pub fn l1(&self) -> f64 {
        self.magnitudes.iter().sum::<f64>() * self.cell_volume
    }

    pub fn quasinorm(&self, p: f64, q: f64) -> Result<f64> {
        check_p(p)?;
        if !(q >= 1.0) {
            return Err(Error::InvalidParameter(format!("q = {q} must lie in [1, inf]")));
        }
        if q.is_infinite() {
            return Ok(self
                .magnitudes
                .iter()
                .enumerate()
                .map(|(i, &m)| m * self.measure(i + 1).powf(1.0 / p))
                .fold(0.0, f64::max));
        }
        // ∫ (λ d(λ)^{1/p})^q dλ/λ summed exactly over the steps of d.
        let mut acc = 0.0;
        for (i, &m) in self.magnitudes.iter().enumerate() {
            let next = self.magnitudes.get(i + 1).copied().unwrap_or(0.0);
            if m > next {
                acc += self.measure(i + 1).powf(q / p) * (m.powf(q) - next.powf(q)) / q;
            }
        }
        Ok(acc.powf(1.0 / q))
    }

    pub fn banach_norm(&self, p: f64, r: f64) -> Result<f64> {
        check_p(p)?;
        if !(r >= 1.0 && r < p) {
            return Err(Error::InvalidParameter(format!("need 1 <= r < p, got r = {r}, p = {p}")));
        }
        let mut prefix = 0.0;
        let mut best = 0.0f64;
        for (i, &m) in self.magnitudes.iter().enumerate() {
            prefix += m.powf(r) * self.cell_volume;
            let mu = self.measure(i + 1);
            best = best.max(mu.powf(-1.0 / r + 1.0 / p) * prefix.powf(1.0 / r));
        }
        Ok(best)
    }

    /// Two columns `(mu_k, m_k)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self
            .magnitudes
            .iter()
            .enumerate()
            .map(|(i, &m)| vec![fmt17(self.measure(i + 1)), fmt17(m)]);
        write_csv(w, &["mu", "m"], rows)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p = {p} must satisfy 1 < p < inf")));
    }
    Ok(())
}

pub fn rearrangement(f: &Field) -> Result<Rearrangement> {
    f.check_finite()?;
    let mut magnitudes = f.magnitude();
    magnitudes.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(Rearrangement { magnitudes, cell_volume: f.grid().cell_volume() })
}

pub fn lorentz_quasinorm(f: &Field, p: f64, q: f64) -> Result<f64> {
    check_p(p)?;
    rearrangement(f)?.quasinorm(p, q)
}

/// The normable equivalent of the weak-L^p quasi-norm; `r = 1` is the usual choice.
pub fn lorentz_banach_norm(f: &Field, p: f64, r: f64) -> Result<f64> {
    check_p(p)?;
    rearrangement(f)?.banach_norm(p, r)
}

pub fn weak_norm(f: &Field, p: f64) -> Result<f64> {
    lorentz_quasinorm(f, p, f64::INFINITY)
}

/// Norm used in iteration ledgers: Banach norm of L^{p,inf} with r = 1.
pub fn ledger_norm(f: &Field, p: f64) -> Result<f64> {
    lorentz_banach_norm(f, p, 1.0)
}

pub fn lebesgue_norm(f: &Field, r: f64) -> Result<f64> {
    f.check_finite()?;
    if !(r >= 1.0) {
        return Err(Error::InvalidParameter(format!("Lebesgue exponent {r} < 1")));
    }
    let mags = f.magnitude();
    if r.is_infinite() {
        return Ok(mags.iter().fold(0.0, |a: f64, &b| a.max(b)));
    }
    let dv = f.grid().cell_volume();
    Ok((mags.iter().map(|m| m.powf(r)).sum::<f64>() * dv).powf(1.0 / r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> Grid {
        Grid::new(3, 4, 2.0).unwrap()
    }

    fn field_of(values: Vec<f64>) -> Field {
        Field::from_data(small_grid(), 1, values).unwrap()
    }

    #[test]
    fn zero_field() {
        let r = rearrangement(&Field::zeros(small_grid(), 3)).unwrap();
        assert_eq!(r.len(), 64);
        assert!(r.magnitudes.iter().all(|&m| m == 0.0));
        assert_eq!(lorentz_banach_norm(&Field::zeros(small_grid(), 1), 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn eight_cell_indicator() {
        let mut v = vec![0.0; 64];
        for i in [1, 5, 9, 20, 33, 40, 41, 63] {
            v[i] = 5.0;
        }
        let r = rearrangement(&field_of(v)).unwrap();
        assert!(r.magnitudes[..8].iter().all(|&m| m == 5.0));
        assert!(r.magnitudes[8..].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn indicator_reproduces_measure_power() {
        // h = 0.5, so each cell has volume 1/8
        let mut v = vec![0.0; 64];
        v[..24].iter_mut().for_each(|x| *x = 1.0);
        let f = field_of(v);
        let vol: f64 = 24.0 / 8.0;
        for p in [1.5, 3.0, 6.0] {
            let expect = vol.powf(1.0 / p);
            assert!((lorentz_quasinorm(&f, p, f64::INFINITY).unwrap() - expect).abs() < 1e-14);
            assert!((lorentz_banach_norm(&f, p, 1.0).unwrap() - expect).abs() < 1e-14);
            // for an indicator, q < inf gives q^{-1/q} V^{1/p}
            let q: f64 = 2.0;
            let expect_q = q.powf(-1.0 / q) * expect;
            assert!((lorentz_quasinorm(&f, p, q).unwrap() - expect_q).abs() < 1e-13);
        }
    }

    #[test]
    fn rearrangement_l1_matches_direct_sum() {
        let g = Grid::new(3, 64, 20.0).unwrap();
        let f = Field::scalar(g, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()).unwrap();
        let r = rearrangement(&f).unwrap();
        let direct: f64 = f.data().iter().map(|v| v.abs()).sum::<f64>() * g.cell_volume();
        assert!((r.l1() - direct).abs() <= 1e-13 * direct);
        assert!(r.magnitudes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn inverse_radius_constant() {
        let expect = (4.0 * std::f64::consts::PI / 3.0).powf(1.0 / 3.0);
        let g = Grid::new(3, 64, 20.0).unwrap();
        let eps = 2.0 * g.spacing();
        let f = Field::scalar(g, |x| 1.0 / (x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + eps * eps).sqrt()).unwrap();
        let v = weak_norm(&f, 3.0).unwrap();
        assert!((v / expect - 1.0).abs() < 0.01, "{v} vs {expect}");
    }

    #[test]
    fn scaled_profile_on_rescaled_grid_is_identical() {
        let prof = |x: &[f64]| (-(x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2])).exp() / (0.1 + x[0].abs());
        let g = Grid::new(3, 32, 8.0).unwrap();
        let base = weak_norm(&Field::scalar(g, prof).unwrap(), 3.0).unwrap();
        for lam in [2.0, 4.0] {
            let gl = Grid::new(3, 32, 8.0 / lam).unwrap();
            let fl = Field::scalar(gl, |x| {
                let y = [lam * x[0], lam * x[1], lam * x[2]];
                lam * prof(&y)
            })
            .unwrap();
            let v = weak_norm(&fl, 3.0).unwrap();
            assert!((v / base - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exponent_and_parameter_checks() {
        let f = field_of(vec![1.0; 64]);
        assert!(lorentz_quasinorm(&f, 1.0, f64::INFINITY).is_err());
        assert!(lorentz_quasinorm(&f, 3.0, 0.5).is_err());
        assert!(lorentz_banach_norm(&f, 3.0, 3.0).is_err());
        assert!(lorentz_banach_norm(&f, 3.0, 4.0).is_err());
    }

    #[test]
    fn non_finite_is_rejected_with_index() {
        let g = small_grid();
        let mut f = Field::zeros(g, 1);
        f.component_mut(0)[9] = f64::INFINITY;
        match rearrangement(&f) {
            Err(Error::NonFinite { index: 9 }) => {}
            other => panic!("{other:?}"),
        }
    }

    fn smooth_random(seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::new(3, 16, 8.0).unwrap();
        let bumps: Vec<([f64; 3], f64, f64)> = (0..4)
            .map(|_| {
                let c = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                (c, rng.gen_range(-2.0..2.0), rng.gen_range(0.3..1.5))
            })
            .collect();
        Field::scalar(g, |x| {
            bumps
                .iter()
                .map(|(c, a, w)| {
                    let r2: f64 = (0..3).map(|d| (x[d] - c[d]).powi(2)).sum();
                    a * (-r2 / (w * w)).exp()
                })
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn banach_norm_equivalence_envelope() {
        let (p, r): (f64, f64) = (3.0, 1.0);
        let bound = (p / (p - r)).powf(1.0 / r);
        let mut envelope = 0.0f64;
        for seed in 0..20 {
            let f = smooth_random(seed);
            let q = weak_norm(&f, p).unwrap();
            let b = lorentz_banach_norm(&f, p, r).unwrap();
            assert!(q <= b * (1.0 + 1e-14));
            assert!(b <= bound * q);
            envelope = envelope.max(b / q);
        }
        assert!(envelope >= 1.0 && envelope <= bound);
    }

    fn values() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 64)
    }

    proptest! {
        #[test]
        fn permutation_invariance(v in values(), seed in any::<u64>()) {
            let mut w = v.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..w.len()).rev() {
                w.swap(i, rng.gen_range(0..=i));
            }
            for p in [1.5, 3.0] {
                let a = weak_norm(&field_of(v.clone()), p).unwrap();
                let b = weak_norm(&field_of(w.clone()), p).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn homogeneity(v in values(), c in -100.0f64..100.0) {
            let f = field_of(v);
            let scaled = f.scale(c);
            for q in [2.0, f64::INFINITY] {
                let a = lorentz_quasinorm(&scaled, 3.0, q).unwrap();
                let b = c.abs() * lorentz_quasinorm(&f, 3.0, q).unwrap();
                prop_assert!((a - b).abs() <= 1e-13 * b.max(1e-300));
            }
        }

        #[test]
        fn quasi_triangle(v in values(), w in values()) {
            let (f, g) = (field_of(v), field_of(w));
            let s = weak_norm(&f.add(&g).unwrap(), 3.0).unwrap();
            prop_assert!(s <= 2.0 * (weak_norm(&f, 3.0).unwrap() + weak_norm(&g, 3.0).unwrap()));
        }

        #[test]
        fn banach_triangle(v in values(), w in values()) {
            let (f, g) = (field_of(v), field_of(w));
            let s = ledger_norm(&f.add(&g).unwrap(), 3.0).unwrap();
            let t = ledger_norm(&f, 3.0).unwrap() + ledger_norm(&g, 3.0).unwrap();
            prop_assert!(s <= t * (1.0 + 1e-14));
        }

        #[test]
        fn nesting_on_indicator_probes(heights in prop::collection::vec(0.1f64..5.0, 1..40), s in 3.5f64..8.0) {
            let p = 3.0;
            let mut v = vec![0.0; 64];
            v[..heights.len()].copy_from_slice(&heights);
            let f = field_of(v);
            let supp = heights.len() as f64 * small_grid().cell_volume();
            let lhs = weak_norm(&f, p).unwrap();
            let rhs = supp.powf(1.0 / p - 1.0 / s) * weak_norm(&f, s).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-14));
        }
    }
}
