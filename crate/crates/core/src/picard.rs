//! Successive approximation schemes and their norm ledgers.
//!
//! Every scheme iterates whole trajectories: one sweep evaluates the Duhamel
//! terms at all nodes of the time grid, then the next iterate replaces the
//! previous one. Smallness thresholds use constants measured on a pinned
//! probe family (see [`ProbeFamily`]) and a safety factor `theta`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::duhamel::{
    critical_estimate_ratio, duhamel_force_all, duhamel_force_post_projected, duhamel_nonlinear_all, march,
    nonlinear_integrand, CriticalVariant, NonlinearForm, TimeGrid, Trajectory,
};
use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::io::{fmt17, write_csv};
use crate::lorentz::{lebesgue_norm, ledger_norm};
use crate::profiles::{curl_bump, low_mode_flow, random_solenoidal};
use crate::spectral::{divergence_max, forward, gradient_tensor, heat_semigroup, inverse, leray_project, write_field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeVariant {
    GlobalWeak,
    GlobalMild,
    LocalShifted,
    Kato,
}

impl SchemeVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeVariant::GlobalWeak => "global_weak",
            SchemeVariant::GlobalMild => "global_mild",
            SchemeVariant::LocalShifted => "local_shifted",
            SchemeVariant::Kato => "kato",
        }
    }

    fn form(&self) -> NonlinearForm {
        match self {
            SchemeVariant::GlobalWeak | SchemeVariant::LocalShifted => NonlinearForm::Tensor,
            SchemeVariant::GlobalMild | SchemeVariant::Kato => NonlinearForm::Convective,
        }
    }
}

/// Exponents of the local theory: `r` for `K`, `rho` and `varrho` for the
/// auxiliary ledgers `N_rho` and `N'_varrho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KatoExponents {
    pub r: f64,
    pub rho: f64,
    pub varrho: f64,
}

impl Default for KatoExponents {
    fn default() -> Self {
        KatoExponents { r: 6.0, rho: 6.0, varrho: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub variant: SchemeVariant,
    pub grid: Grid,
    pub time: TimeGrid,
    pub max_iter: usize,
    /// Relative: stop once `d_m < tol * sup_t ||u_{m+1}||`.
    pub tol: f64,
    pub kato: KatoExponents,
    pub theta: f64,
    /// Splitting scale `eps` of `a = e^{eps Δ} a + (a - e^{eps Δ} a)`, fixed per run.
    pub split_epsilon: f64,
}

impl SchemeConfig {
    pub fn new(variant: SchemeVariant, grid: Grid, time: TimeGrid) -> Self {
        let split_epsilon = grid.spacing().powi(2);
        SchemeConfig {
            variant,
            grid,
            time,
            max_iter: 60,
            tol: 1e-10,
            kato: KatoExponents::default(),
            theta: 0.5,
            split_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.dim as f64;
        let KatoExponents { r, rho, varrho } = self.kato;
        if !(r > n && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("Kato exponent r = {r} must exceed n = {n}")));
        }
        if !(rho > n && rho.is_finite() && varrho > n && varrho < rho) {
            return Err(Error::InvalidParameter(format!("need n < varrho < rho, got varrho = {varrho}, rho = {rho}")));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter(format!("theta = {} must lie in (0, 1)", self.theta)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("tolerance {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.split_epsilon >= 0.0 && self.split_epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("split epsilon {} must be nonnegative", self.split_epsilon)));
        }
        Ok(())
    }

    fn with_time(&self, time: TimeGrid) -> Self {
        SchemeConfig { time, ..self.clone() }
    }
}

/// Pinned probe set for the empirical constants: the low-mode flow, a few
/// seeded random solenoidal fields and all their pairwise sums, each
/// carried by its heat flow over the calibration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFamily {
    pub version: u32,
    pub seed: u64,
    pub random: usize,
    pub kmax: i64,
    pub decay: f64,
}

impl Default for ProbeFamily {
    fn default() -> Self {
        ProbeFamily { version: 1, seed: 7, random: 3, kmax: 2, decay: 0.5 }
    }
}

impl ProbeFamily {
    pub fn base_fields(&self, grid: Grid) -> Result<Vec<Field>> {
        let mut out = vec![low_mode_flow(grid, 1.0)?];
        for i in 0..self.random {
            out.push(random_solenoidal(grid, self.seed.wrapping_add(i as u64), self.kmax, self.decay)?);
        }
        Ok(out)
    }

    /// Base fields followed by all pairwise sums.
    pub fn fields(&self, grid: Grid) -> Result<Vec<Field>> {
        let base = self.base_fields(grid)?;
        let mut out = base.clone();
        for i in 0..base.len() {
            for j in i + 1..base.len() {
                out.push(base[i].add(&base[j])?);
            }
        }
        Ok(out)
    }

    /// Identifies the probe set together with the grid and time nodes.
    pub fn hash(&self, grid: &Grid, time: &TimeGrid) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).unwrap_or_default());
        h.update(serde_json::to_string(grid).unwrap_or_default());
        for t in time.nodes() {
            h.update(fmt17(*t));
        }
        hex::encode(h.finalize())
    }
}

/// Maximal observed ratios over the probe family; `None` when the constant
/// was not needed by the calibrated variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConstants {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c5: Option<f64>,
    pub c6: Option<f64>,
    pub c7: Option<f64>,
    pub c8: Option<f64>,
    pub a_p: Option<f64>,
    pub b_p: Option<f64>,
    pub family: ProbeFamily,
    pub probe_hash: String,
}

impl EmpiricalConstants {
    fn need(v: Option<f64>, name: &str) -> Result<f64> {
        v.ok_or_else(|| Error::InvalidParameter(format!("empirical constant {name} was not calibrated")))
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Measures the constants a variant needs on the probe family carried by
/// heat flows over `time`. Local-shifted constants use `e^{tΔ}v - v`.
pub fn calibrate(
    variant: SchemeVariant,
    grid: Grid,
    time: &TimeGrid,
    family: &ProbeFamily,
    kato: &KatoExponents,
) -> Result<EmpiricalConstants> {
    let n = grid.dim as f64;
    let mut c = EmpiricalConstants {
        c1: None,
        c2: None,
        c5: None,
        c6: None,
        c7: None,
        c8: None,
        a_p: None,
        b_p: None,
        family: family.clone(),
        probe_hash: family.hash(&grid, time),
    };
    let mut best = [0.0f64; 6];
    for v in family.fields(grid)? {
        let flow = Trajectory::heat_flow(time.clone(), &v)?;
        match variant {
            SchemeVariant::GlobalWeak => {
                let g = duhamel_nonlinear_all(&flow, &flow, NonlinearForm::Tensor)?;
                let k = flow.sup(|f| ledger_norm(f, n))?;
                best[0] = best[0].max(ratio(g.sup(|f| ledger_norm(f, n))?, k * k));
            }
            SchemeVariant::GlobalMild => {
                let g = duhamel_nonlinear_all(&flow, &flow, NonlinearForm::Convective)?;
                let k = flow.sup(|f| ledger_norm(f, n))?;
                best[0] = best[0].max(ratio(g.sup(|f| ledger_norm(f, n))?, k * k));
                let ks = mild_norm(&flow)?;
                best[1] = best[1].max(ratio(mild_norm(&g)?, ks * ks));
            }
            SchemeVariant::LocalShifted => {
                let w = flow.map(|f| f.sub(&v))?;
                let g = duhamel_nonlinear_all(&w, &w, NonlinearForm::Tensor)?;
                let k = w.sup(|f| ledger_norm(f, n))?;
                best[2] = best[2].max(ratio(g.sup(|f| ledger_norm(f, n))?, k * k));
            }
            SchemeVariant::Kato => {
                let g = duhamel_nonlinear_all(&flow, &flow, NonlinearForm::Convective)?;
                let [k, l, m] = kato_norms(&flow, kato.r)?;
                let [gk, gl, gm] = kato_norms(&g, kato.r)?;
                best[3] = best[3].max(ratio(gk, k * k));
                best[4] = best[4].max(ratio(gl, k * l));
                best[5] = best[5].max(ratio(gm, k * m));
            }
        }
    }
    match variant {
        SchemeVariant::GlobalWeak => c.c1 = Some(best[0]),
        SchemeVariant::GlobalMild => {
            c.c1 = Some(best[0]);
            c.c2 = Some(best[1]);
        }
        SchemeVariant::LocalShifted => c.c5 = Some(best[2]),
        SchemeVariant::Kato => {
            c.c6 = Some(best[3]);
            c.c7 = Some(best[4]);
            c.c8 = Some(best[5]);
        }
    }
    Ok(c)
}

/// Lower envelopes of the critical-estimate constants: the largest ratio
/// over constant-in-time, zero-mean curl-bump probes of three orientations.
pub fn calibrate_critical(grid: Grid, time: &TimeGrid, p_modi: f64, p_meyer: f64) -> Result<(f64, f64)> {
    let mut a: f64 = 0.0;
    let mut b: f64 = 0.0;
    for w in [[1.0, 0.5, 0.2], [0.0, 0.0, 1.0], [0.3, -1.0, 0.6]] {
        let g = curl_bump(grid, 1.5, w)?.without_mean();
        let traj = Trajectory::constant(time.clone(), &g);
        a = a.max(critical_estimate_ratio(&traj, p_modi, CriticalVariant::Modi)?.ratio);
        b = b.max(critical_estimate_ratio(&traj, p_meyer, CriticalVariant::Meyer)?.ratio);
    }
    Ok((a, b))
}

/// `max(sup ||u||_{n,∞}, sup ||∇u||_{n/2,∞})`.
pub fn mild_norm(u: &Trajectory) -> Result<f64> {
    let n = u.grid().dim as f64;
    let k = u.sup(|f| ledger_norm(f, n))?;
    let g = u.sup(|f| ledger_norm(&gradient_tensor(f), n / 2.0))?;
    Ok(k.max(g))
}

/// `[K, L, M]` over the whole trajectory.
pub fn kato_norms(v: &Trajectory, r: f64) -> Result<[f64; 3]> {
    let k = running_kato(v, r)?;
    Ok([k.0.last().copied().unwrap_or(0.0), k.1.last().copied().unwrap_or(0.0), k.2.last().copied().unwrap_or(0.0)])
}

/// Running sups `K(s_j), L(s_j), M(s_j)` at every node.
fn running_kato(v: &Trajectory, r: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = v.grid().dim as f64;
    let beta = 0.5 - n / (2.0 * r);
    let (mut k, mut l, mut m) = (Vec::new(), Vec::new(), Vec::new());
    let (mut sk, mut sl, mut sm) = (0.0f64, 0.0f64, 0.0f64);
    for (t, f) in v.time().nodes().iter().zip(v.fields()) {
        if *t > 0.0 {
            sk = sk.max(t.powf(beta) * lebesgue_norm(f, r)?);
            sm = sm.max(t.sqrt() * ledger_norm(&gradient_tensor(f), n)?);
        }
        sl = sl.max(ledger_norm(f, n)?);
        k.push(sk);
        l.push(sl);
        m.push(sm);
    }
    Ok((k, l, m))
}

/// `sup_t t^w ||D^deriv v(t)||_s` over positive nodes.
fn weighted_lebesgue_sup(v: &Trajectory, weight: f64, s: f64, gradient: bool) -> Result<f64> {
    let mut out = 0.0f64;
    for (t, f) in v.time().nodes().iter().zip(v.fields()) {
        if *t > 0.0 {
            let x = if gradient { lebesgue_norm(&gradient_tensor(f), s)? } else { lebesgue_norm(f, s)? };
            out = out.max(t.powf(weight) * x);
        }
    }
    Ok(out)
}

fn running_sup(values: &[f64]) -> Vec<f64> {
    let mut s = 0.0f64;
    values
        .iter()
        .map(|v| {
            s = s.max(*v);
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub m: usize,
    /// `𝒦_m`, or `sup ||w_m||_{n,∞}` for the shifted scheme.
    pub sup_norm: f64,
    /// `𝒦*_m` for the mild variant.
    pub mild: Option<f64>,
    /// `[K_m, L_m, M_m]` for the Kato scheme.
    pub kato: Option<[f64; 3]>,
    /// `sup ||G[a,w_m] + G[w_m,a]||_{n,∞}` for the shifted scheme.
    pub cross: Option<f64>,
    /// `d_m = sup ||u_{m+1} - u_m||_{n,∞}`.
    pub diff: Option<f64>,
    /// The recurrence inequality linking this iterate to the previous one.
    pub law_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormLedger {
    pub variant: SchemeVariant,
    pub constants: EmpiricalConstants,
    pub theta: f64,
    /// Initial norms and thresholds, keyed by name.
    pub initial: BTreeMap<String, f64>,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub t_loc: f64,
    /// Diagnostics such as solenoidality defects and auxiliary ledgers.
    pub extras: BTreeMap<String, f64>,
}

impl NormLedger {
    fn new(variant: SchemeVariant, constants: &EmpiricalConstants, theta: f64) -> Self {
        NormLedger {
            variant,
            constants: constants.clone(),
            theta,
            initial: BTreeMap::new(),
            records: Vec::new(),
            converged: false,
            t_loc: 0.0,
            extras: BTreeMap::new(),
        }
    }

    pub fn diffs(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.diff).collect()
    }

    /// `d_{m+1} / d_m` for consecutive nonzero differences.
    pub fn cauchy_ratios(&self) -> Vec<f64> {
        self.diffs().windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect()
    }

    pub fn law_holds(&self) -> bool {
        self.records.iter().all(|r| r.law_holds)
    }

    /// `𝒦_m <= 2 𝒦_0` for every recorded iterate.
    pub fn uniform_bound_holds(&self) -> bool {
        let k0 = self.initial.get("K0").copied().unwrap_or(f64::INFINITY);
        self.records.iter().all(|r| r.sup_norm <= 2.0 * k0 * (1.0 + 1e-12))
    }

    /// Columns `m,sup_norm,mild,K,L,M,cross,d,law`; absent entries are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        let rows = self.records.iter().map(|r| {
            let k = r.kato.map(|k| k.map(fmt17)).unwrap_or_default();
            vec![
                r.m.to_string(),
                fmt17(r.sup_norm),
                opt(r.mild),
                k[0].clone(),
                k[1].clone(),
                k[2].clone(),
                opt(r.cross),
                opt(r.diff),
                r.law_holds.to_string(),
            ]
        });
        write_csv(w, &["m", "sup_norm", "mild", "K", "L", "M", "cross", "d", "law"], rows)
    }
}

#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub u: Trajectory,
    pub ledger: NormLedger,
    pub t_loc: f64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a SchemeConfig,
    ledger: &'a NormLedger,
}

impl SchemeRun {
    /// Writes `manifest.json`, `ledger.csv` and the final snapshot `u_final.bin`.
    pub fn write_outputs(&self, cfg: &SchemeConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = RunManifest { config: cfg, ledger: &self.ledger };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &manifest)?;
        self.ledger.write_csv(BufWriter::new(File::create(dir.join("ledger.csv"))?))?;
        let last = self.u.at(self.u.time().intervals());
        write_field(BufWriter::new(File::create(dir.join("u_final.bin"))?), last)?;
        Ok(())
    }
}

fn check_data(a: &Field, f: &Trajectory, cfg: &SchemeConfig) -> Result<Field> {
    cfg.validate()?;
    if a.grid() != &cfg.grid {
        return Err(Error::Mismatch("initial data grid differs from the scheme grid".into()));
    }
    if f.grid() != &cfg.grid || f.time() != &cfg.time {
        return Err(Error::Mismatch("force grid or time grid differs from the scheme".into()));
    }
    if a.comps() != cfg.grid.dim || f.comps() != cfg.grid.dim {
        return Err(Error::Shape("initial data and force must be vector fields".into()));
    }
    leray_project(a)
}

/// `e^{tΔ}a + ∫ e^{(t-s)Δ} P f`, recording the gap between the two force
/// orderings (projection inside or after the integral).
fn base_trajectory(a: &Field, f: &Trajectory, ledger: &mut NormLedger) -> Result<Trajectory> {
    let heat = Trajectory::heat_flow(f.time().clone(), a)?;
    let inner = duhamel_force_all(f)?;
    let outer = duhamel_force_post_projected(f)?;
    let gap = inner.sub(&outer)?.sup(|x| Ok(x.max_abs()))?;
    let scale = inner.sup(|x| Ok(x.max_abs()))?;
    ledger.extras.insert("force_order_gap".into(), ratio(gap, scale));
    heat.add(&inner)
}

fn relative_divergence(u: &Trajectory) -> Result<f64> {
    let mut worst = 0.0f64;
    for f in u.fields() {
        let m = f.max_abs();
        if m > 0.0 {
            worst = worst.max(divergence_max(f)? / m);
        }
    }
    Ok(worst)
}

/// Drives `u_{m+1} = step(u_m)` until the relative stop rule holds.
/// `record(m, u_m, u_{m+1}, d_m)` is called after each sweep.
fn iterate(
    start: Trajectory,
    cfg: &SchemeConfig,
    ledger: &mut NormLedger,
    mut step: impl FnMut(&Trajectory) -> Result<Trajectory>,
    mut record: impl FnMut(usize, &Trajectory, f64, &mut NormLedger) -> Result<()>,
) -> Result<Trajectory> {
    let n = cfg.grid.dim as f64;
    let mut u = start;
    let mut diffs = Vec::new();
    let mut worst_div = 0.0f64;
    for m in 0..cfg.max_iter {
        worst_div = worst_div.max(relative_divergence(&u)?);
        let next = step(&u)?;
        let d = next.sub(&u)?.sup(|x| ledger_norm(x, n))?;
        let size = next.sup(|x| ledger_norm(x, n))?;
        diffs.push(d);
        record(m, &u, d, ledger)?;
        if !d.is_finite() || d > 1e8 * (1.0 + size) {
            break;
        }
        u = next;
        if d <= cfg.tol * size {
            ledger.converged = true;
            ledger.extras.insert("max_relative_divergence".into(), worst_div.max(relative_divergence(&u)?));
            return Ok(u);
        }
    }
    Err(Error::Diverged { tol: cfg.tol, last: diffs.last().copied().unwrap_or(f64::NAN), diffs })
}

/// Global schemes `u_{m+1} = u_0 + G[u_m, u_m]` (tensor form) or with `G*`.
pub fn global_scheme(a: &Field, f: &Trajectory, cfg: &SchemeConfig, consts: &EmpiricalConstants) -> Result<SchemeRun> {
    let a = check_data(a, f, cfg)?;
    let variant = cfg.variant;
    if !matches!(variant, SchemeVariant::GlobalWeak | SchemeVariant::GlobalMild) {
        return Err(Error::InvalidParameter(format!("{} is not a global variant", variant.name())));
    }
    let n = cfg.grid.dim as f64;
    let c1 = EmpiricalConstants::need(consts.c1, "C1")?;
    let mut ledger = NormLedger::new(variant, consts, cfg.theta);
    let u0 = base_trajectory(&a, f, &mut ledger)?;
    let k0 = u0.sup(|x| ledger_norm(x, n))?;
    let threshold = cfg.theta / (4.0 * c1);
    ledger.initial.insert("K0".into(), k0);
    ledger.initial.insert("K0_threshold".into(), threshold);
    ledger.initial.insert("K0_final_node".into(), ledger_norm(u0.at(cfg.time.intervals()), n)?);
    if k0 >= threshold {
        return Err(Error::Refused {
            quantity: "K0".into(),
            measured: k0,
            threshold,
            detail: format!("global smallness theta/(4 C1) with C1 = {c1:.6e}"),
        });
    }
    let mild = variant == SchemeVariant::GlobalMild;
    let (c2, k0_star) = if mild {
        let c2 = EmpiricalConstants::need(consts.c2, "C2")?;
        let ks = mild_norm(&u0)?;
        let thr = cfg.theta / (4.0 * c2);
        ledger.initial.insert("K0_star".into(), ks);
        ledger.initial.insert("K0_star_threshold".into(), thr);
        if !ks.is_finite() || ks >= thr {
            return Err(Error::Refused {
                quantity: "K0_star".into(),
                measured: ks,
                threshold: thr,
                detail: format!("mild smallness theta/(4 C2) with C2 = {c2:.6e}"),
            });
        }
        (c2, ks)
    } else {
        (0.0, 0.0)
    };
    let form = variant.form();
    let mut prev: Option<(f64, f64)> = None;
    let u = iterate(
        u0.clone(),
        cfg,
        &mut ledger,
        |um| u0.add(&duhamel_nonlinear_all(um, um, form)?),
        |m, um, d, ledger| {
            let k = um.sup(|x| ledger_norm(x, n))?;
            let ks = if mild { Some(mild_norm(um)?) } else { None };
            let slack = 1.0 + 1e-10;
            let law = match prev {
                None => true,
                Some((kp, ksp)) => {
                    let weak = k <= (k0 + c1 * kp * kp) * slack;
                    let star = ks.map_or(true, |s| s <= (k0_star + c2 * ksp * ksp) * slack);
                    weak && star
                }
            };
            prev = Some((k, ks.unwrap_or(0.0)));
            ledger.records.push(IterationRecord { m, sup_norm: k, mild: ks, kato: None, cross: None, diff: Some(d), law_holds: law });
            Ok(())
        },
    )?;
    ledger.t_loc = cfg.time.t_end();
    Ok(SchemeRun { u, ledger, t_loc: cfg.time.t_end() })
}

/// Duhamel term of `G[a,w] + G[w,a]` in tensor form.
fn cross_term(a: &Field, w: &Trajectory) -> Result<Trajectory> {
    let as_ = forward(a);
    let spectra = march(w.time(), w.time().intervals(), |j| {
        let ws = forward(w.at(j));
        let mut s = nonlinear_integrand(&as_, &ws, NonlinearForm::Tensor)?;
        s.axpy(1.0, &nonlinear_integrand(&ws, &as_, NonlinearForm::Tensor)?)?;
        Ok(s)
    })?;
    Trajectory::new(w.time().clone(), spectra.iter().map(inverse).collect())
}

/// Shifted local scheme `u = a + w` on `[0, T_loc]`.
pub fn local_shifted_scheme(a: &Field, f: &Trajectory, cfg: &SchemeConfig, consts: &EmpiricalConstants) -> Result<SchemeRun> {
    let a = check_data(a, f, cfg)?;
    if cfg.variant != SchemeVariant::LocalShifted {
        return Err(Error::InvalidParameter(format!("{} is not the shifted variant", cfg.variant.name())));
    }
    let n = cfg.grid.dim as f64;
    let c5 = EmpiricalConstants::need(consts.c5, "C5")?;
    let mut ledger = NormLedger::new(cfg.variant, consts, cfg.theta);
    let a_eps = heat_semigroup(&a, cfg.split_epsilon)?;
    ledger.extras.insert("split_epsilon".into(), cfg.split_epsilon);
    ledger.extras.insert("split_remainder".into(), ledger_norm(&a.sub(&a_eps)?, n)?);
    ledger.extras.insert("split_smooth_lr".into(), lebesgue_norm(&a_eps, cfg.kato.r)?);
    let w0 = base_trajectory(&a, f, &mut ledger)?.map(|x| x.sub(&a))?;
    let a_traj = Trajectory::constant(cfg.time.clone(), &a);
    let gaa = duhamel_nonlinear_all(&a_traj, &a_traj, NonlinearForm::Tensor)?;
    let fixed = w0.add(&gaa)?;
    let threshold = cfg.theta / (16.0 * c5);
    let sups = running_sup(&fixed.norms(|x| ledger_norm(x, n))?);
    let mut end = (2..sups.len()).rev().find(|&j| sups[j] <= threshold).ok_or_else(|| Error::Refused {
        quantity: "sup ||w0 + G[a,a]||".into(),
        measured: sups.get(2).copied().unwrap_or(f64::NAN),
        threshold,
        detail: "no grid time satisfies the shifted threshold theta/(16 C5); grid too coarse or data too singular".into(),
    })?;
    ledger.initial.insert("a_norm".into(), ledger_norm(&a, n)?);
    ledger.initial.insert("threshold".into(), threshold);
    ledger.initial.insert("first_choice_T".into(), cfg.time.nodes()[end]);
    loop {
        let sub = cfg.with_time(cfg.time.prefix(end)?);
        let fixed_p = fixed.prefix(end)?;
        let fixed_sup = sups[end];
        ledger.records.clear();
        ledger.initial.insert("K0".into(), fixed_sup);
        let mut violation: Option<usize> = None;
        let mut prev_w: Option<f64> = None;
        let res = iterate(
            w0.prefix(end)?,
            &sub,
            &mut ledger,
            |w| {
                let cross = cross_term(&a, w)?;
                let ww = duhamel_nonlinear_all(w, w, NonlinearForm::Tensor)?;
                let c = running_sup(&cross.norms(|x| ledger_norm(x, n))?);
                let ws = running_sup(&w.norms(|x| ledger_norm(x, n))?);
                if let Some(k) = (1..c.len()).find(|&k| ws[k] > 0.0 && c[k] >= 0.5 * ws[k]) {
                    violation = Some(k);
                    return Err(Error::Refused {
                        quantity: "cross term".into(),
                        measured: c[k],
                        threshold: 0.5 * ws[k],
                        detail: format!("cross-term bound fails at node {k}"),
                    });
                }
                fixed_p.add(&cross)?.add(&ww)
            },
            |m, w, d, ledger| {
                let s = w.sup(|x| ledger_norm(x, n))?;
                let law = prev_w.map_or(true, |p| s <= (fixed_sup + 0.5 * p + c5 * p * p) * (1.0 + 1e-10));
                prev_w = Some(s);
                ledger.records.push(IterationRecord { m, sup_norm: s, mild: None, kato: None, cross: None, diff: Some(d), law_holds: law });
                Ok(())
            },
        );
        match (res, violation) {
            (Ok(w), _) => {
                // Cross terms of the converged iterate, for the ledger.
                let cross = cross_term(&a, &w)?;
                let cs = cross.sup(|x| ledger_norm(x, n))?;
                if let Some(r) = ledger.records.last_mut() {
                    r.cross = Some(cs);
                }
                let t_loc = sub.time.t_end();
                ledger.t_loc = t_loc;
                let u = w.map(|x| x.add(&a))?;
                return Ok(SchemeRun { u, ledger, t_loc });
            }
            (Err(_), Some(k)) if k > 2 => end = k - 1,
            (Err(e), _) => return Err(e),
        }
    }
}

/// Kato's scheme `v_{m+1} = v_0 + G*[v_m, v_m]` on the certified `[0, T_loc]`.
pub fn kato_scheme(a: &Field, f: &Trajectory, cfg: &SchemeConfig, consts: &EmpiricalConstants) -> Result<SchemeRun> {
    let a = check_data(a, f, cfg)?;
    if cfg.variant != SchemeVariant::Kato {
        return Err(Error::InvalidParameter(format!("{} is not the Kato variant", cfg.variant.name())));
    }
    let n = cfg.grid.dim as f64;
    let r = cfg.kato.r;
    let c6 = EmpiricalConstants::need(consts.c6, "C6")?;
    let c7 = EmpiricalConstants::need(consts.c7, "C7")?;
    let c8 = EmpiricalConstants::need(consts.c8, "C8")?;
    let mut ledger = NormLedger::new(cfg.variant, consts, cfg.theta);
    let v0_full = base_trajectory(&a, f, &mut ledger)?;
    let eta = cfg.theta * (1.0 / (4.0 * c6)).min(1.0 / (2.0 * c7)).min(1.0 / (2.0 * c8));
    let beta = 0.5 - n / (2.0 * r);
    let nodes = cfg.time.nodes();
    let mut k0_run = Vec::with_capacity(nodes.len());
    let mut s = 0.0f64;
    for (t, x) in nodes.iter().zip(v0_full.fields()) {
        if *t > 0.0 {
            s = s.max(t.powf(beta) * lebesgue_norm(x, r)?);
        }
        k0_run.push(s);
    }
    let end = (2..nodes.len()).rev().find(|&j| k0_run[j] < eta).ok_or_else(|| Error::Refused {
        quantity: "K0(T)".into(),
        measured: k0_run.get(2).copied().unwrap_or(f64::NAN),
        threshold: eta,
        detail: "no grid time satisfies the Kato smallness conditions".into(),
    })?;
    let t_loc = nodes[end];
    let force_sup = f.sup(|x| ledger_norm(&leray_project(x)?, n))?;
    let data_size = lebesgue_norm(&a, r)? + force_sup;
    // Measured constant of K0(T) <= c_k T^beta (||a||_r + sup ||P f||).
    let c_k = (1..nodes.len()).map(|j| ratio(k0_run[j], nodes[j].powf(beta) * data_size)).fold(0.0, f64::max);
    let bound = if data_size > 0.0 && c_k > 0.0 {
        1.0f64.min((eta / (c_k * data_size)).powf(2.0 * r / (r - n)))
    } else {
        1.0
    };
    let below = nodes.iter().rev().find(|&&t| t <= bound).copied().unwrap_or(0.0);
    ledger.initial.insert("eta".into(), eta);
    ledger.initial.insert("K0".into(), k0_run[end]);
    ledger.initial.insert("data_size".into(), data_size);
    ledger.initial.insert("c_k".into(), c_k);
    ledger.initial.insert("lower_bound".into(), bound);
    ledger.initial.insert("lower_bound_holds".into(), if t_loc >= below { 1.0 } else { 0.0 });
    let sub = cfg.with_time(cfg.time.prefix(end)?);
    let v0 = v0_full.prefix(end)?;
    let [k0, l0, m0] = kato_norms(&v0, r)?;
    ledger.initial.insert("L0".into(), l0);
    ledger.initial.insert("M0".into(), m0);
    let mut prev: Option<[f64; 3]> = None;
    let v = iterate(
        v0.clone(),
        &sub,
        &mut ledger,
        |vm| v0.add(&duhamel_nonlinear_all(vm, vm, NonlinearForm::Convective)?),
        |m, vm, d, ledger| {
            let km = kato_norms(vm, r)?;
            let slack = 1.0 + 1e-10;
            let law = prev.map_or(true, |[kp, lp, mp]| {
                km[0] <= (k0 + c6 * kp * kp) * slack && km[1] <= (l0 + c7 * kp * lp) * slack && km[2] <= (m0 + c8 * kp * mp) * slack
            });
            prev = Some(km);
            let sup = vm.sup(|x| ledger_norm(x, n))?;
            ledger.records.push(IterationRecord { m, sup_norm: sup, mild: None, kato: Some(km), cross: None, diff: Some(d), law_holds: law });
            Ok(())
        },
    )?;
    let KatoExponents { rho, varrho, .. } = cfg.kato;
    ledger.extras.insert("N_rho".into(), weighted_lebesgue_sup(&v, 0.5 - n / (2.0 * rho), rho, false)?);
    ledger.extras.insert("N_prime_varrho".into(), weighted_lebesgue_sup(&v, 1.0 - n / (2.0 * varrho), varrho, true)?);
    let [_, _, m_star] = kato_norms(&v, r)?;
    ledger.extras.insert("M_star".into(), m_star);
    ledger.t_loc = t_loc;
    Ok(SchemeRun { u: v, ledger, t_loc })
}

/// K0(s_j) = sup_{0<t<=s_j} t^{1/2-n/(2r)} ||u_0(t)||_r at every node.
pub fn kato_k0_profile(a: &Field, f: &Trajectory, r: f64) -> Result<Vec<f64>> {
    let n = a.grid().dim as f64;
    if r <= n {
        return Err(Error::InvalidParameter(format!("r = {r} must exceed n")));
    }
    let a = leray_project(a)?;
    let u0 = Trajectory::heat_flow(f.time().clone(), &a)?.add(&duhamel_force_all(f)?)?;
    let beta = 0.5 - n / (2.0 * r);
    let mut s = 0.0f64;
    u0.time()
        .nodes()
        .iter()
        .zip(u0.fields())
        .map(|(t, x)| {
            if *t > 0.0 {
                s = s.max(t.powf(beta) * lebesgue_norm(x, r)?);
            }
            Ok(s)
        })
        .collect()
}

/// Runs whichever scheme `cfg.variant` names.
pub fn run_scheme(a: &Field, f: &Trajectory, cfg: &SchemeConfig, consts: &EmpiricalConstants) -> Result<SchemeRun> {
    match cfg.variant {
        SchemeVariant::GlobalWeak | SchemeVariant::GlobalMild => global_scheme(a, f, cfg, consts),
        SchemeVariant::LocalShifted => local_shifted_scheme(a, f, cfg, consts),
        SchemeVariant::Kato => kato_scheme(a, f, cfg, consts),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegralForm {
    /// Tensor form, the weak mild equation.
    IEstar,
    /// Convective form, the mild equation.
    IE,
}

/// Fixed-point defect of `u` in `||·||_{n,∞}`, relative to `sup ||u||`.
pub fn residual_integral_equation(u: &Trajectory, a: &Field, f: &Trajectory, form: IntegralForm) -> Result<f64> {
    residual_with(u, a, f, Some(form))
}

/// Defect against the linear equation only (nonlinearity disabled).
pub fn residual_linear(u: &Trajectory, a: &Field, f: &Trajectory) -> Result<f64> {
    residual_with(u, a, f, None)
}

fn residual_with(u: &Trajectory, a: &Field, f: &Trajectory, form: Option<IntegralForm>) -> Result<f64> {
    u.check_compatible(f)?;
    if a.grid() != u.grid() {
        return Err(Error::Mismatch("initial data grid differs from the trajectory".into()));
    }
    let n = u.grid().dim as f64;
    let a = leray_project(a)?;
    let mut rhs = Trajectory::heat_flow(u.time().clone(), &a)?.add(&duhamel_force_all(f)?)?;
    if let Some(form) = form {
        let nf = match form {
            IntegralForm::IEstar => NonlinearForm::Tensor,
            IntegralForm::IE => NonlinearForm::Convective,
        };
        rhs = rhs.add(&duhamel_nonlinear_all(u, u, nf)?)?;
    }
    let defect = u.sub(&rhs)?.sup(|x| ledger_norm(x, n))?;
    Ok(ratio(defect, u.sup(|x| ledger_norm(x, n))?))
}

fn form_of(variant: SchemeVariant) -> IntegralForm {
    match variant.form() {
        NonlinearForm::Tensor => IntegralForm::IEstar,
        NonlinearForm::Convective => IntegralForm::IE,
    }
}

/// Common nodes of two trajectories up to the shorter horizon, as index pairs.
fn common_nodes(a: &TimeGrid, b: &TimeGrid) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (x, y) = (a.nodes(), b.nodes());
    let (mut i, mut j) = (0, 0);
    while i < x.len() && j < y.len() {
        let tol = 1e-13 * x[i].abs().max(y[j].abs()).max(1e-300);
        if (x[i] - y[j]).abs() <= tol {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if x[i] < y[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// `sup` over common nodes of `||u - v||_{n,∞}`, relative to `sup ||u||`.
pub fn trajectory_distance(u: &Trajectory, v: &Trajectory) -> Result<(f64, f64)> {
    let n = u.grid().dim as f64;
    let pairs = common_nodes(u.time(), v.time());
    let (mut diff, mut size) = (0.0f64, 0.0f64);
    for &(i, j) in &pairs {
        diff = diff.max(ledger_norm(&u.at(i).sub(v.at(j))?, n)?);
        size = size.max(ledger_norm(u.at(i), n)?);
    }
    let end = pairs.last().map(|&(i, _)| u.time().nodes()[i]).unwrap_or(0.0);
    Ok((ratio(diff, size), end))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Agree,
    Disagree,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationReport {
    pub t_max: f64,
    pub t_end: f64,
    /// Long run vs re-seeded run on `[T_max, T_end]`, relative.
    pub difference: f64,
    pub residuals: Vec<f64>,
    pub status: Agreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub schemes: [SchemeVariant; 2],
    pub common_end: f64,
    pub difference: f64,
    pub residuals: [f64; 2],
    pub status: Agreement,
    pub note: String,
}

/// Runs two schemes from the same data and compares them on their common
/// nodes. A refusal or divergence makes the report inconclusive.
pub fn uniqueness_compare(
    a: &Field,
    f: [&Trajectory; 2],
    cfg: [&SchemeConfig; 2],
    consts: [&EmpiricalConstants; 2],
) -> Result<UniquenessReport> {
    let schemes = [cfg[0].variant, cfg[1].variant];
    let mut runs = Vec::new();
    for k in 0..2 {
        match run_scheme(a, f[k], cfg[k], consts[k]) {
            Ok(r) => runs.push(r),
            Err(e @ (Error::Refused { .. } | Error::Diverged { .. })) => {
                return Ok(UniquenessReport {
                    schemes,
                    common_end: 0.0,
                    difference: f64::NAN,
                    residuals: [f64::NAN; 2],
                    status: Agreement::Inconclusive,
                    note: format!("{} did not converge: {e}", schemes[k].name()),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let mut residuals = [0.0; 2];
    for k in 0..2 {
        let fk = f[k].prefix(runs[k].u.time().intervals())?;
        residuals[k] = residual_integral_equation(&runs[k].u, a, &fk, form_of(schemes[k]))?;
    }
    let (difference, common_end) = trajectory_distance(&runs[0].u, &runs[1].u)?;
    let tol = 3.0 * residuals[0].max(residuals[1]);
    let status = if difference <= tol { Agreement::Agree } else { Agreement::Disagree };
    Ok(UniquenessReport { schemes, common_end, difference, residuals, status, note: format!("tolerance {tol:.3e}") })
}

/// Solves on the full grid and, separately, on `[0, s_split]` followed by a
/// re-seeded run from `u(s_split)` on the remaining nodes; compares both.
pub fn continuation_check(a: &Field, f: &Trajectory, cfg: &SchemeConfig, consts: &EmpiricalConstants, split: usize) -> Result<ContinuationReport> {
    let nodes = cfg.time.nodes().to_vec();
    if split < 2 || split + 2 > nodes.len() {
        return Err(Error::InvalidParameter(format!("split node {split} leaves too few nodes on one side")));
    }
    let form = form_of(cfg.variant);
    let inconclusive = |t_max: f64, note: Error| {
        let _ = note;
        Ok(ContinuationReport { t_max, t_end: nodes[nodes.len() - 1], difference: f64::NAN, residuals: vec![], status: Agreement::Inconclusive })
    };
    let t_max = nodes[split];
    let long = match run_scheme(a, f, cfg, consts) {
        Ok(r) => r,
        Err(e @ (Error::Refused { .. } | Error::Diverged { .. })) => return inconclusive(t_max, e),
        Err(e) => return Err(e),
    };
    let first_cfg = cfg.with_time(cfg.time.prefix(split)?);
    let first = match run_scheme(a, &f.prefix(split)?, &first_cfg, consts) {
        Ok(r) => r,
        Err(e @ (Error::Refused { .. } | Error::Diverged { .. })) => return inconclusive(t_max, e),
        Err(e) => return Err(e),
    };
    let t_max = first.t_loc;
    let split = cfg.time.index_of(t_max)?;
    let tail_time = TimeGrid::from_nodes(nodes[split..].iter().map(|t| t - t_max).collect())?;
    let tail_force = Trajectory::new(tail_time.clone(), f.fields()[split..].to_vec())?;
    let seed = first.u.at(first.u.time().intervals()).clone();
    let second_cfg = cfg.with_time(tail_time);
    let second = match run_scheme(&seed, &tail_force, &second_cfg, consts) {
        Ok(r) => r,
        Err(e @ (Error::Refused { .. } | Error::Diverged { .. })) => return inconclusive(t_max, e),
        Err(e) => return Err(e),
    };
    let n = cfg.grid.dim as f64;
    let long_end = long.u.time().intervals();
    let mut diff = 0.0f64;
    let mut size = 0.0f64;
    for (k, x) in second.u.fields().iter().enumerate() {
        let j = split + k;
        if j > long_end {
            break;
        }
        diff = diff.max(ledger_norm(&long.u.at(j).sub(x)?, n)?);
        size = size.max(ledger_norm(long.u.at(j), n)?);
    }
    let residuals = vec![
        residual_integral_equation(&long.u, a, &f.prefix(long_end)?, form)?,
        residual_integral_equation(&first.u, a, &f.prefix(split)?, form)?,
        residual_integral_equation(&second.u, &seed, &tail_force.prefix(second.u.time().intervals())?, form)?,
    ];
    let difference = ratio(diff, size);
    let tol = 3.0 * residuals.iter().copied().fold(0.0, f64::max);
    let status = if difference <= tol { Agreement::Agree } else { Agreement::Disagree };
    let t_end = long.u.time().t_end().min(t_max + second.u.time().t_end());
    Ok(ContinuationReport { t_max, t_end, difference, residuals, status })
}

/// Trend of a small-time series: the smallest positive nodes, whether the
/// values decrease towards `t = 0`, and the intercept of a least-squares
/// line through them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallTimeTrend {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub decreasing: bool,
    pub extrapolant: f64,
}

/// Uses the `k` smallest positive nodes.
pub fn small_time_trend(times: &[f64], values: &[f64], k: usize) -> Result<SmallTimeTrend> {
    let pts: Vec<(f64, f64)> = times.iter().zip(values).filter(|(t, _)| **t > 0.0).map(|(t, v)| (*t, *v)).take(k).collect();
    if pts.len() < k || k < 2 {
        return Err(Error::InvalidParameter(format!("need {k} positive nodes for a small-time trend")));
    }
    let decreasing = pts.windows(2).all(|w| w[0].1 < w[1].1);
    let m = pts.len() as f64;
    let (st, sv) = pts.iter().fold((0.0, 0.0), |(a, b), (t, v)| (a + t, b + v));
    let (mt, mv) = (st / m, sv / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (t, v)| (a + (t - mt) * (v - mv), b + (t - mt) * (t - mt)));
    let slope = ratio(num, den);
    let extrapolant = (mv - slope * mt).abs();
    Ok(SmallTimeTrend { times: pts.iter().map(|p| p.0).collect(), values: pts.iter().map(|p| p.1).collect(), decreasing, extrapolant })
}

/// Ten smooth solenoidal test fields for the weak-* check.
pub fn weak_star_battery(grid: Grid) -> Result<Vec<Field>> {
    (0..10u64).map(|i| random_solenoidal(grid, 1000 + i, 1 + (i as i64 % 3), 1.0)).collect()
}

/// `max_phi |<u(t) - a, phi>|` at each node, with its small-time trend.
pub fn weak_star_attainment(u: &Trajectory, a: &Field) -> Result<(Vec<f64>, SmallTimeTrend)> {
    let battery = weak_star_battery(*u.grid())?;
    let a = leray_project(a)?;
    let mut values = Vec::new();
    for x in u.fields() {
        let d = x.sub(&a)?;
        let mut worst = 0.0f64;
        for phi in &battery {
            worst = worst.max(d.pairing(phi)?.abs());
        }
        values.push(worst);
    }
    let trend = small_time_trend(u.time().nodes(), &values, 4)?;
    Ok((values, trend))
}

/// `||u(t) - a||_{n,∞}` at each node, with its small-time trend.
pub fn strong_attainment(u: &Trajectory, a: &Field) -> Result<(Vec<f64>, SmallTimeTrend)> {
    let n = u.grid().dim as f64;
    let a = leray_project(a)?;
    let values = u.norms(|x| ledger_norm(&x.sub(&a)?, n))?;
    let trend = small_time_trend(u.time().nodes(), &values, 4)?;
    Ok((values, trend))
}
