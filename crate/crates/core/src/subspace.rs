//! Probes for the subspace of `L^{n,∞}_σ` on which the heat semigroup is
//! strongly continuous at `t = 0`.
//!
//! A sweep measures `δ_j = ||e^{ε_j Δ} f - f||_{p,∞}` (weak quasi-norm) on a
//! halving ladder `ε_j = ε_0 2^{-j}`. Members show `δ_j → 0`; scale-invariant
//! profiles plateau.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::duhamel::{duhamel_force_all, Trajectory};
use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::harness::decay_rate_fit;
use crate::io::{fmt17, write_csv};
use crate::lorentz::{lebesgue_norm, weak_norm};
use crate::profiles::CatalogueProfile;
use crate::spectral::{forward, inverse, Lattice, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub eps0: f64,
    /// Last index `J`; the ladder has `J + 1` rungs.
    pub steps: usize,
    /// Relative spread of the last three `δ_j` below which a plateau is flagged.
    pub plateau_tol: f64,
}

impl Ladder {
    pub fn new(eps0: f64, steps: usize) -> Result<Self> {
        let l = Ladder { eps0, steps, plateau_tol: 0.10 };
        l.validate()?;
        Ok(l)
    }

    /// `ε_0 = 0.05`, ten rungs: resolves the linear regime of smooth data.
    pub fn fine() -> Self {
        Ladder { eps0: 0.05, steps: 9, plateau_tol: 0.10 }
    }

    /// `ε_0 = 32`, four rungs: large scales where a scale-invariant profile
    /// is not yet distorted by the mollification.
    pub fn coarse() -> Self {
        Ladder { eps0: 32.0, steps: 3, plateau_tol: 0.10 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return Err(Error::InvalidParameter(format!("ladder start {} must be positive", self.eps0)));
        }
        if self.steps < 3 {
            return Err(Error::InvalidParameter("a ladder needs at least 4 rungs".into()));
        }
        if !(self.plateau_tol > 0.0) {
            return Err(Error::InvalidParameter("plateau tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.eps0 * 0.5f64.powi(j as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuitySweep {
    pub p: f64,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    /// `||f||_{p,∞}`.
    pub norm: f64,
    /// Log-log slope of `δ` against `ε` over the whole ladder; `None` when
    /// some `δ_j` vanishes.
    pub slope: Option<f64>,
    /// `(max - min) / max` over the last three `δ_j`.
    pub variation: f64,
    pub plateau: bool,
}

impl ContinuitySweep {
    fn build(p: f64, eps: Vec<f64>, delta: Vec<f64>, norm: f64, plateau_tol: f64) -> Self {
        // The shared fit wants five points; four-rung ladders use the same line directly.
        let slope = if !delta.iter().all(|d| *d > 0.0) {
            None
        } else if eps.len() >= 5 {
            decay_rate_fit(&eps, &delta).ok().map(|f| f.slope)
        } else {
            loglog_slope(&eps, &delta)
        };
        let tail = &delta[delta.len() - 3..];
        let hi = tail.iter().copied().fold(0.0, f64::max);
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let variation = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
        let plateau = hi > 0.0 && variation < plateau_tol;
        ContinuitySweep { p, eps, delta, norm, slope, variation, plateau }
    }

    /// Mean of the last three `δ_j`.
    pub fn plateau_level(&self) -> f64 {
        self.delta[self.delta.len() - 3..].iter().sum::<f64>() / 3.0
    }

    /// Columns `eps,delta,slope_window`; every rung is inside the fit window.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.eps.iter().zip(&self.delta).map(|(e, d)| vec![fmt17(*e), fmt17(*d), "1".to_string()]);
        write_csv(w, &["eps", "delta", "slope_window"], rows)
    }
}

fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Core of both sweep paths: `component(c)` yields one component's spectrum.
/// Components are transformed one at a time to bound memory.
fn sweep_components(
    grid: Grid,
    comps: usize,
    p: f64,
    ladder: &Ladder,
    component: impl Fn(usize) -> Result<Spectrum>,
) -> Result<ContinuitySweep> {
    ladder.validate()?;
    let pts = grid.points();
    let lam = Lattice::new(&grid).eigenvalues();
    let magnitude = |mult: &dyn Fn(f64) -> f64| -> Result<f64> {
        let mut sq = vec![0.0; pts];
        for c in 0..comps {
            let mut s = component(c)?;
            for (z, l) in s.data_mut().iter_mut().zip(&lam) {
                *z *= mult(*l);
            }
            let f = inverse(&s);
            for (acc, v) in sq.iter_mut().zip(f.data()) {
                *acc += v * v;
            }
        }
        let mag = Field::from_data(grid, 1, sq.into_iter().map(f64::sqrt).collect())?;
        weak_norm(&mag, p)
    };
    let norm = magnitude(&|_| 1.0)?;
    let eps = ladder.values();
    let mut delta = Vec::with_capacity(eps.len());
    for &e in &eps {
        delta.push(magnitude(&|l| (-e * l).exp_m1())?);
    }
    Ok(ContinuitySweep::build(p, eps, delta, norm, ladder.plateau_tol))
}

fn default_p(grid: &Grid, p: Option<f64>) -> Result<f64> {
    let p = p.unwrap_or(grid.dim as f64);
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("sweep exponent {p} must exceed 1")));
    }
    Ok(p)
}

/// Sweep of a vector field, projected on entry; `p` defaults to `n`.
pub fn semigroup_continuity_sweep(f: &Field, p: Option<f64>, ladder: &Ladder) -> Result<ContinuitySweep> {
    let p = default_p(f.grid(), p)?;
    let grid = *f.grid();
    let mut s = forward(f);
    s.project()?;
    sweep_components(grid, f.comps(), p, ladder, |c| Spectrum::from_data(grid, 1, s.component(c).to_vec()))
}

/// Sweep of `P(g e_axis)` for a scalar `g`, never materialising the full
/// vector spectrum. Used for the large refinement grids.
pub fn projected_scalar_sweep(g: &Field, axis: usize, p: Option<f64>, ladder: &Ladder) -> Result<ContinuitySweep> {
    let grid = *g.grid();
    if g.comps() != 1 || axis >= grid.dim {
        return Err(Error::Shape("projected sweep needs a scalar field and a valid axis".into()));
    }
    let p = default_p(&grid, p)?;
    let gh = forward(g);
    let lat = Lattice::new(&grid);
    sweep_components(grid, grid.dim, p, ladder, |c| {
        let mut out = gh.clone();
        let data = out.data_mut();
        lat.for_each_mode(|flat, _, xt, _| {
            let k2: f64 = xt.iter().map(|x| x * x).sum();
            let delta = if c == axis { 1.0 } else { 0.0 };
            let m = if k2 == 0.0 { delta } else { delta - xt[c] * xt[axis] / k2 };
            data[flat] *= m;
        });
        Ok(out)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    NonMember,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipThresholds {
    /// `τ_abs = tau_rel · ||f||_{n,∞}`.
    pub tau_rel: f64,
    pub slope_cut: f64,
    /// Plateaus must exceed `plateau_factor · τ_abs`.
    pub plateau_factor: f64,
}

impl Default for MembershipThresholds {
    fn default() -> Self {
        MembershipThresholds { tau_rel: 1e-3, slope_cut: 0.5, plateau_factor: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipDecision {
    pub decision: Membership,
    pub tau_abs: f64,
    pub reason: String,
    pub sweep: ContinuitySweep,
}

pub fn xsigma_membership(sweep: &ContinuitySweep, th: &MembershipThresholds) -> MembershipDecision {
    let tau_abs = th.tau_rel * sweep.norm;
    let last = *sweep.delta.last().unwrap_or(&0.0);
    let (decision, reason) = if sweep.norm == 0.0 {
        (Membership::Member, "zero field".to_string())
    } else if last < tau_abs && sweep.slope.map_or(false, |s| s >= th.slope_cut) {
        (Membership::Member, format!("delta_J = {last:.3e} < tau_abs and slope {:.3} >= {}", sweep.slope.unwrap(), th.slope_cut))
    } else if sweep.plateau && sweep.plateau_level() > th.plateau_factor * tau_abs {
        (
            Membership::NonMember,
            format!("plateau {:.3e} (spread {:.1}%) exceeds {} tau_abs", sweep.plateau_level(), 100.0 * sweep.variation, th.plateau_factor),
        )
    } else {
        (
            Membership::Inconclusive,
            format!("delta_J = {last:.3e}, slope {:?}, spread {:.1}%", sweep.slope, 100.0 * sweep.variation),
        )
    };
    MembershipDecision { decision, tau_abs, reason, sweep: sweep.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogueEntry {
    pub profile: CatalogueProfile,
    pub expected: Membership,
    pub ladder: Ladder,
    pub rationale: String,
}

/// Reference profiles with their expected decisions.
pub fn catalogue() -> Vec<CatalogueEntry> {
    let entry = |profile, expected, ladder, rationale: &str| CatalogueEntry { profile, expected, ladder, rationale: rationale.into() };
    vec![
        entry(CatalogueProfile::SmoothBump, Membership::Member, Ladder::fine(), "smooth and rapidly decaying; the heat semigroup converges at rate eps"),
        entry(
            CatalogueProfile::FarFieldInverse,
            Membership::Member,
            Ladder::fine(),
            "decays like 1/|x| but is smooth, so it lies in the domain of the Laplacian",
        ),
        entry(
            CatalogueProfile::GlobalInverse,
            Membership::NonMember,
            Ladder::coarse(),
            "scale-invariant |x|^-1 profile; the semigroup defect is independent of eps",
        ),
        entry(
            CatalogueProfile::CheckerboardInverse,
            Membership::NonMember,
            Ladder::coarse(),
            "scale-invariant with sign changes across coordinate planes",
        ),
    ]
}

/// Sweeps a catalogue profile, through the scalar path where possible.
pub fn catalogue_sweep(profile: CatalogueProfile, grid: Grid, ladder: &Ladder) -> Result<ContinuitySweep> {
    match profile.scalar(grid)? {
        Some(g) => projected_scalar_sweep(&g, 0, None, ladder),
        None => semigroup_continuity_sweep(&profile.field(grid)?, None, ladder),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogueResult {
    pub entry: CatalogueEntry,
    pub grid: Grid,
    pub decision: MembershipDecision,
}

impl CatalogueResult {
    pub fn matches(&self) -> bool {
        self.decision.decision == self.entry.expected
    }
}

pub fn run_catalogue(grid: Grid, th: &MembershipThresholds) -> Result<Vec<CatalogueResult>> {
    catalogue()
        .into_iter()
        .map(|entry| {
            let sweep = catalogue_sweep(entry.profile, grid, &entry.ladder)?;
            let decision = xsigma_membership(&sweep, th);
            Ok(CatalogueResult { entry, grid, decision })
        })
        .collect()
}

/// JSON manifest of the catalogue with measured decisions.
pub fn write_catalogue_manifest<W: Write>(w: W, results: &[CatalogueResult]) -> Result<()> {
    serde_json::to_writer_pretty(w, results)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityApproximation {
    /// Times of the snapshots the interpolant passes through.
    pub snapshot_times: Vec<f64>,
    pub snapshot_errors: Vec<f64>,
    /// Largest `||f(t_i) - f(t_{i+1})||_{p,∞}` over consecutive nodes.
    pub modulus: f64,
    /// `sup_t ||f(t) - f_eps(t)||_{p,∞}` over all nodes.
    pub sup_error: f64,
    /// `max_k ||φ_k||_{p'}`, finite for every truncated snapshot.
    pub max_lp_prime: f64,
    pub met: bool,
    #[serde(skip)]
    pub approximant: Option<Trajectory>,
}

impl DensityApproximation {
    pub fn node_count(&self) -> usize {
        self.snapshot_times.len()
    }
}

/// Radius-`r` cutoff `½(1 - tanh((|x| - r) / 2h))` and height clamp `hmax`.
fn truncate(f: &Field, r: f64, hmax: f64) -> Result<Field> {
    let grid = *f.grid();
    let h = grid.spacing();
    let comps = f.comps();
    let mag = f.magnitude();
    let mut out = f.clone();
    let mut cut = vec![1.0; grid.points()];
    if r.is_finite() {
        grid.for_each_point(|i, x| {
            let rad = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            cut[i] = 0.5 * (1.0 - ((rad - r) / (2.0 * h)).tanh());
        });
    }
    for c in 0..comps {
        for (i, v) in out.component_mut(c).iter_mut().enumerate() {
            let clamp = if mag[i] > hmax { hmax / mag[i] } else { 1.0 };
            *v *= clamp * cut[i];
        }
    }
    Ok(out)
}

/// Most aggressive truncation of `f` within `target` in `||·||_{p,∞}`:
/// smallest radius first, then smallest height.
fn snapshot(f: &Field, p: f64, target: f64) -> Result<(Field, f64)> {
    let grid = *f.grid();
    let l = grid.length;
    let top = f.max_abs() * (f.comps() as f64).sqrt();
    let radii = [l / 8.0, l / 4.0, 3.0 * l / 8.0, l / 2.0, f64::INFINITY];
    let heights: Vec<f64> = (0..=8).rev().map(|k| top * 0.5f64.powi(k)).chain([f64::INFINITY]).collect();
    for &r in &radii {
        for &hmax in &heights {
            let phi = truncate(f, r, hmax)?;
            let err = weak_norm(&f.sub(&phi)?, p)?;
            if err < target {
                return Ok((phi, err));
            }
        }
    }
    Ok((f.clone(), 0.0))
}

/// Piecewise-linear-in-time approximant through truncated snapshots with
/// `sup_t ||f(t) - f_eps(t)||_{p,∞} < eps`. Snapshot nodes are chosen
/// greedily so that interpolating `f` itself stays within `3 eps / 5`;
/// each snapshot is within `eps / 5`.
pub fn density_approximation(f: &Trajectory, eps: f64, p: f64, p_prime: f64) -> Result<DensityApproximation> {
    if !(eps > 0.0 && p > 1.0 && p_prime > p) {
        return Err(Error::InvalidParameter(format!("need eps > 0 and 1 < p < p', got {eps}, {p}, {p_prime}")));
    }
    let nodes = f.time().nodes();
    let m = f.time().intervals();
    let mut modulus = 0.0f64;
    for j in 0..m {
        modulus = modulus.max(weak_norm(&f.at(j + 1).sub(f.at(j))?, p)?);
    }
    let lerp = |a: &Field, b: &Field, th: f64| -> Result<Field> { a.scale(1.0 - th).add(&b.scale(th)) };
    let mut chosen = vec![0usize];
    let mut k = 0;
    while k < m {
        let mut end = k + 1;
        for e in k + 2..=m {
            let mut worst = 0.0f64;
            for i in k + 1..e {
                let th = (nodes[i] - nodes[k]) / (nodes[e] - nodes[k]);
                worst = worst.max(weak_norm(&f.at(i).sub(&lerp(f.at(k), f.at(e), th)?)?, p)?);
            }
            if worst <= 0.6 * eps {
                end = e;
            } else {
                break;
            }
        }
        chosen.push(end);
        k = end;
    }
    let mut snaps = Vec::with_capacity(chosen.len());
    let mut snapshot_errors = Vec::with_capacity(chosen.len());
    let mut max_lp_prime = 0.0f64;
    for &j in &chosen {
        let (phi, err) = snapshot(f.at(j), p, 0.2 * eps)?;
        max_lp_prime = max_lp_prime.max(lebesgue_norm(&phi, p_prime)?);
        snaps.push(phi);
        snapshot_errors.push(err);
    }
    let mut fields = Vec::with_capacity(m + 1);
    let mut seg = 0;
    for i in 0..=m {
        while seg + 1 < chosen.len() - 1 && chosen[seg + 1] < i {
            seg += 1;
        }
        let (a, b) = (chosen[seg], chosen[(seg + 1).min(chosen.len() - 1)]);
        let th = if b > a { (nodes[i] - nodes[a]) / (nodes[b] - nodes[a]) } else { 0.0 };
        fields.push(lerp(&snaps[seg], &snaps[(seg + 1).min(snaps.len() - 1)], th)?);
    }
    let approx = Trajectory::new(f.time().clone(), fields)?;
    let sup_error = f.sub(&approx)?.sup(|x| weak_norm(x, p))?;
    let met = sup_error < eps && snapshot_errors.iter().all(|e| *e < 0.2 * eps);
    Ok(DensityApproximation {
        snapshot_times: chosen.iter().map(|&j| nodes[j]).collect(),
        snapshot_errors,
        modulus,
        sup_error,
        max_lp_prime,
        met,
        approximant: Some(approx),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelXsigmaReport {
    pub times: Vec<f64>,
    /// `||F(t)||_{n,∞}` at every node.
    pub norms: Vec<f64>,
    /// Fitted exponent of `||F(t)||_{n,∞}` over the smallest positive nodes.
    pub slope: Option<f64>,
    pub decisions: Vec<(f64, Membership)>,
    pub all_member: bool,
}

/// Sweeps the Duhamel force `F(t)` at the nodes `probe` and fits its small-time decay.
pub fn duhamel_xsigma_check(f: &Trajectory, probe: &[usize], ladder: &Ladder, th: &MembershipThresholds) -> Result<DuhamelXsigmaReport> {
    let n = f.grid().dim as f64;
    let big_f = duhamel_force_all(f)?;
    let times = f.time().nodes().to_vec();
    let norms = big_f.norms(|x| weak_norm(x, n))?;
    let mut decisions = Vec::new();
    for &j in probe {
        if j >= times.len() {
            return Err(Error::InvalidParameter(format!("probe node {j} beyond the grid")));
        }
        let sweep = semigroup_continuity_sweep(big_f.at(j), None, ladder)?;
        decisions.push((times[j], xsigma_membership(&sweep, th).decision));
    }
    let (t, v): (Vec<f64>, Vec<f64>) = times.iter().zip(&norms).skip(1).take(8).map(|(a, b)| (*a, *b)).unzip();
    let slope = decay_rate_fit(&t, &v).ok().map(|p| p.slope);
    let all_member = decisions.iter().all(|(_, d)| *d == Membership::Member);
    Ok(DuhamelXsigmaReport { times, norms, slope, decisions, all_member })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duhamel::TimeGrid;
    use crate::profiles::{curl_bump, grid_sigma, mollified_power_field, random_solenoidal};
    use proptest::prelude::*;

    #[test]
    fn ladder_rules() {
        assert!(Ladder::new(1.0, 2).is_err());
        assert!(Ladder::new(-1.0, 5).is_err());
        let l = Ladder::new(1.0, 4).unwrap();
        let v = l.values();
        assert_eq!(v.len(), 5);
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn smooth_bump_is_member_with_unit_slope() {
        let grid = Grid::new(3, 32, 10.0).unwrap();
        let f = curl_bump(grid, 1.0, [1.0, 0.5, 0.2]).unwrap();
        let sweep = semigroup_continuity_sweep(&f, None, &Ladder::fine()).unwrap();
        assert!((sweep.slope.unwrap() - 1.0).abs() < 0.2, "slope {:?}", sweep.slope);
        assert!(sweep.delta.windows(2).all(|w| w[1] <= w[0] * 1.01));
        let d = xsigma_membership(&sweep, &MembershipThresholds::default());
        assert_eq!(d.decision, Membership::Member, "{}", d.reason);
    }

    #[test]
    fn scalar_path_matches_vector_path() {
        let grid = Grid::new(3, 16, 8.0).unwrap();
        let g = mollified_power_field(grid, 1.0, grid_sigma(&grid)).unwrap();
        let ladder = Ladder::new(1.0, 4).unwrap();
        let a = projected_scalar_sweep(&g, 0, None, &ladder).unwrap();
        let b = semigroup_continuity_sweep(&g.scalar_to_vector(0).unwrap(), None, &ladder).unwrap();
        assert!((a.norm / b.norm - 1.0).abs() < 1e-12);
        for (x, y) in a.delta.iter().zip(&b.delta) {
            assert!((x / y - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_field_is_trivial_member() {
        let grid = Grid::new(3, 8, 4.0).unwrap();
        let s = semigroup_continuity_sweep(&Field::zeros(grid, 3), None, &Ladder::fine()).unwrap();
        assert_eq!(xsigma_membership(&s, &MembershipThresholds::default()).decision, Membership::Member);
    }

    #[test]
    fn borderline_plateau_is_inconclusive() {
        let sweep = ContinuitySweep::build(3.0, vec![4.0, 2.0, 1.0, 0.5], vec![5e-3, 5e-3, 5e-3, 5e-3], 1.0, 0.1);
        assert!(sweep.plateau);
        let d = xsigma_membership(&sweep, &MembershipThresholds::default());
        assert_eq!(d.decision, Membership::Inconclusive);
        let sweep = ContinuitySweep::build(3.0, vec![4.0, 2.0, 1.0, 0.5], vec![0.3, 0.3, 0.3, 0.3], 1.0, 0.1);
        assert_eq!(xsigma_membership(&sweep, &MembershipThresholds::default()).decision, Membership::NonMember);
    }

    #[test]
    fn sweep_csv_layout() {
        let sweep = ContinuitySweep::build(3.0, vec![4.0, 2.0, 1.0, 0.5], vec![1.0, 0.5, 0.25, 0.125], 1.0, 0.1);
        assert!((sweep.slope.unwrap() - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("eps,delta,slope_window\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn density_of_constant_smooth_force_is_exact() {
        let grid = Grid::new(3, 16, 8.0).unwrap();
        let f = curl_bump(grid, 1.0, [0.0, 0.0, 1.0]).unwrap();
        let traj = Trajectory::constant(TimeGrid::uniform(1.0, 8).unwrap(), &f);
        let d = density_approximation(&traj, 1e-3, 3.0, 4.0).unwrap();
        assert!(d.met);
        assert_eq!(d.node_count(), 2);
        assert!(d.sup_error < 1e-3);
    }

    #[test]
    fn density_of_oscillating_singular_force() {
        let grid = Grid::new(3, 16, 8.0).unwrap();
        let g = mollified_power_field(grid, 1.0, grid_sigma(&grid)).unwrap().scalar_to_vector(0).unwrap();
        let time = TimeGrid::uniform(6.0, 24).unwrap();
        let traj = Trajectory::from_fn(time, |t| Ok(g.scale(t.sin()))).unwrap();
        let size = traj.sup(|x| weak_norm(x, 3.0)).unwrap();
        let mut prev = 0;
        for eps in [0.2 * size, 0.1 * size, 0.05 * size] {
            let d = density_approximation(&traj, eps, 3.0, 4.0).unwrap();
            assert!(d.met, "eps {eps}: error {}", d.sup_error);
            assert!(d.max_lp_prime.is_finite());
            assert!(d.node_count() >= prev);
            prev = d.node_count();
        }
    }

    #[test]
    fn duhamel_of_zero_force() {
        let grid = Grid::new(3, 8, 4.0).unwrap();
        let f = Trajectory::zeros(TimeGrid::uniform(1.0, 4).unwrap(), grid, 3);
        let r = duhamel_xsigma_check(&f, &[2, 4], &Ladder::fine(), &MembershipThresholds::default()).unwrap();
        assert!(r.all_member);
        assert!(r.norms.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duhamel_of_constant_smooth_force() {
        let grid = Grid::new(3, 32, 10.0).unwrap();
        let f = curl_bump(grid, 1.0, [1.0, 0.5, 0.2]).unwrap();
        let time = TimeGrid::graded(1.0, 32, 2.0).unwrap();
        let traj = Trajectory::constant(time, &f);
        let r = duhamel_xsigma_check(&traj, &[8, 16, 32], &Ladder::fine(), &MembershipThresholds::default()).unwrap();
        assert!(r.all_member, "{:?}", r.decisions);
        // 3/2 - n/(2p) with p = n
        assert!((r.slope.unwrap() - 1.0).abs() < 0.1, "slope {:?}", r.slope);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn ladder_decreases(eps0 in 1e-3f64..100.0, steps in 3usize..16) {
            let v = Ladder::new(eps0, steps).unwrap().values();
            prop_assert!(v.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(v.iter().all(|e| *e > 0.0));
        }

        #[test]
        fn smooth_sweeps_are_monotone(seed in 0u64..1000, kmax in 1i64..4) {
            let g = Grid::new(3, 16, std::f64::consts::TAU).unwrap();
            let f = random_solenoidal(g, seed, kmax, 0.5).unwrap();
            let s = semigroup_continuity_sweep(&f, None, &Ladder::fine()).unwrap();
            prop_assert!(s.delta.iter().all(|d| *d >= 0.0));
            prop_assert!(s.delta.windows(2).all(|w| w[1] <= w[0] * 1.01));
        }
    }
}
