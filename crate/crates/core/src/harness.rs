//! Cross-cutting verifiers and the experiment runner.
//!
//! An [`ExperimentSpec`] is a self-describing JSON manifest. Running it writes
//! a copy of the manifest, CSV tables and `summary.txt` into the output
//! directory and maps the outcome to an exit status: 0 pass, 1 assertion
//! failure, 2 refusal by a smallness precheck, 3 invalid manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::duhamel::{critical_estimate_ratio, write_probe_csv, CriticalVariant, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::io::{fmt17, write_csv};
use crate::lorentz::{ledger_norm, lebesgue_norm, lorentz_quasinorm, weak_norm};
use crate::picard::{
    calibrate, continuation_check, residual_integral_equation, run_scheme, small_time_trend, uniqueness_compare, Agreement,
    EmpiricalConstants, IntegralForm, KatoExponents, ProbeFamily, SchemeConfig, SchemeRun, SchemeVariant, SmallTimeTrend,
};
use crate::profiles::{curl_bump, grid_sigma, low_mode_flow, mollified_power_field, random_solenoidal, CatalogueProfile};
use crate::spectral::{convective_spectrum, forward, gradient_tensor, heat_semigroup, inverse};
use crate::subspace::{run_catalogue, write_catalogue_manifest, MembershipThresholds};

/// Least-squares line through `(ln t, ln v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn decay_rate_fit(t: &[f64], v: &[f64]) -> Result<PowerFit> {
    if t.len() != v.len() {
        return Err(Error::Shape(format!("{} abscissae for {} values", t.len(), v.len())));
    }
    if t.len() < 5 {
        return Err(Error::InvalidParameter(format!("power fit needs at least 5 points, got {}", t.len())));
    }
    if let Some(bad) = t.iter().chain(v).find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!("power fit needs positive finite data, got {bad}")));
    }
    let x: Vec<f64> = t.iter().map(|a| a.ln()).collect();
    let y: Vec<f64> = v.iter().map(|a| a.ln()).collect();
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("power fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(PowerFit { slope, intercept, r2 })
}

fn semigroup_series(grid: Grid, p: f64, r: f64, times: &[f64]) -> Result<(PowerFit, PowerFit, Vec<f64>, Vec<f64>)> {
    let a = mollified_power_field(grid, grid.dim as f64 / p, grid_sigma(&grid))?;
    let mut plain = Vec::new();
    let mut grad = Vec::new();
    for &t in times {
        let h = heat_semigroup(&a, t)?;
        plain.push(lorentz_quasinorm(&h, r, f64::INFINITY)?);
        grad.push(lorentz_quasinorm(&gradient_tensor(&h), r, f64::INFINITY)?);
    }
    Ok((decay_rate_fit(times, &plain)?, decay_rate_fit(times, &grad)?, plain, grad))
}

/// Power fits of `||e^{tΔ}a||_{r,∞}` and `||∇e^{tΔ}a||_{r,∞}` for the
/// mollified homogeneous profile `a = e^{σΔ}|x|^{-n/p}`, `σ = h²`.
pub fn semigroup_rates(grid: Grid, p: f64, r: f64, times: &[f64]) -> Result<(PowerFit, PowerFit)> {
    let (f0, f1, _, _) = semigroup_series(grid, p, r, times)?;
    Ok((f0, f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongResidual {
    pub times: Vec<f64>,
    /// `||∂_t u - Δu + P[u·∇u] - P f||_{n,∞}` at each interior node.
    pub defects: Vec<f64>,
    /// Normaliser: `sup ||∂_t u||_{n,∞}` over the window.
    pub scale: f64,
    /// `sup defect / scale`.
    pub residual: f64,
}

impl StrongResidual {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.times.iter().zip(&self.defects).map(|(t, d)| vec![fmt17(*t), fmt17(*d)]);
        write_csv(w, &["t", "defect"], rows)
    }
}

/// Compares a three-point non-uniform central difference of `u` with the
/// right-hand side of the strong equation at interior nodes of `[t0, t1]`.
/// `nonlinear = false` drops the convective term.
pub fn verify_strong_de(u: &Trajectory, f: &Trajectory, window: (f64, f64), nonlinear: bool) -> Result<StrongResidual> {
    let (t0, t1) = window;
    if !(t0 > 0.0) {
        return Err(Error::InvalidParameter(format!("window start {t0} must be positive; no derivative is claimed at t = 0")));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!("empty window [{t0}, {t1}]")));
    }
    u.check_compatible(f)?;
    let n = u.grid().dim as f64;
    let nodes = u.time().nodes();
    let mut times = Vec::new();
    let mut defects = Vec::new();
    let mut scale = 0.0f64;
    for j in 1..nodes.len() - 1 {
        if nodes[j] < t0 || nodes[j] > t1 {
            continue;
        }
        let (h1, h2) = (nodes[j] - nodes[j - 1], nodes[j + 1] - nodes[j]);
        let mut dudt = u.at(j - 1).scale(-h2 / (h1 * (h1 + h2)));
        dudt.axpy((h2 - h1) / (h1 * h2), u.at(j))?;
        dudt.axpy(h1 / (h2 * (h1 + h2)), u.at(j + 1))?;
        let us = forward(u.at(j));
        let mut rhs = us.clone();
        rhs.laplacian();
        if nonlinear {
            let mut conv = convective_spectrum(&us, &us)?;
            conv.project()?;
            rhs.axpy(-1.0, &conv)?;
        }
        let mut fs = forward(f.at(j));
        fs.project()?;
        rhs.axpy(1.0, &fs)?;
        let rhs = inverse(&rhs);
        scale = scale.max(ledger_norm(&dudt, n)?);
        defects.push(ledger_norm(&dudt.sub(&rhs)?, n)?);
        times.push(nodes[j]);
    }
    if times.is_empty() {
        return Err(Error::InvalidParameter("window contains no interior node".into()));
    }
    let worst = defects.iter().copied().fold(0.0, f64::max);
    let residual = if scale > 0.0 { worst / scale } else { worst };
    Ok(StrongResidual { times, defects, scale, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrezisReport {
    pub r: f64,
    pub times: Vec<f64>,
    /// `γ(t) = t^{1/2 - n/(2r)} ||u(t)||_r`.
    pub gamma: Vec<f64>,
    /// `δ(t) = max_{t0} t^{1/2 - n/(2r)} ||e^{tΔ} u(t0)||_r` over up to 16 snapshots.
    pub orbit_modulus: Vec<f64>,
    pub trend: Option<SmallTimeTrend>,
    /// The four smallest-time values decrease and extrapolate below half of
    /// the largest of them.
    pub holds: bool,
}

impl BrezisReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = (0..self.times.len()).map(|i| vec![fmt17(self.times[i]), fmt17(self.gamma[i]), fmt17(self.orbit_modulus[i])]);
        write_csv(w, &["t", "gamma", "orbit_modulus"], rows)
    }
}

pub fn brezis_decay_profile(u: &Trajectory, r: f64) -> Result<BrezisReport> {
    let n = u.grid().dim as f64;
    if !(r > n) {
        return Err(Error::InvalidParameter(format!("Brezis profile needs r > n, got {r}")));
    }
    let beta = 0.5 - n / (2.0 * r);
    let nodes = u.time().nodes();
    let gamma: Vec<f64> = nodes.iter().zip(u.fields()).map(|(t, x)| Ok(t.powf(beta) * lebesgue_norm(x, r)?)).collect::<Result<_>>()?;
    let stride = nodes.len().div_ceil(16).max(1);
    let snaps: Vec<&Field> = u.fields().iter().step_by(stride).collect();
    let mut orbit = Vec::with_capacity(nodes.len());
    for &t in nodes {
        let mut best = 0.0f64;
        if t > 0.0 {
            for s in &snaps {
                best = best.max(t.powf(beta) * lebesgue_norm(&heat_semigroup(s, t)?, r)?);
            }
        }
        orbit.push(best);
    }
    let (trend, holds) = if gamma.iter().all(|g| *g == 0.0) {
        (None, true)
    } else {
        // Power-law extrapolation of the four smallest positive nodes to a
        // sixteenth of the smallest node; a plateau keeps its level there.
        let mut tr = small_time_trend(nodes, &gamma, 4)?;
        let top = tr.values[3];
        tr.extrapolant = if tr.values.iter().all(|v| *v > 0.0) {
            let (lt, lv): (Vec<f64>, Vec<f64>) = tr.times.iter().zip(&tr.values).map(|(t, v)| (t.ln(), v.ln())).unzip();
            let (mt, mv) = (lt.iter().sum::<f64>() / 4.0, lv.iter().sum::<f64>() / 4.0);
            let sxx: f64 = lt.iter().map(|x| (x - mt) * (x - mt)).sum();
            let sxy: f64 = lt.iter().zip(&lv).map(|(x, y)| (x - mt) * (y - mv)).sum();
            let slope = sxy / sxx;
            (mv + slope * ((tr.times[0] / 16.0).ln() - mt)).exp()
        } else {
            0.0
        };
        let ok = tr.decreasing && tr.extrapolant < 0.5 * top;
        (Some(tr), ok)
    };
    Ok(BrezisReport { r, times: nodes.to_vec(), gamma, orbit_modulus: orbit, trend, holds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

impl GridSpec {
    fn build(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.length).map_err(|e| Error::Spec(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpec {
    pub t_end: f64,
    pub m: usize,
    pub gamma: f64,
}

impl TimeSpec {
    fn build(&self) -> Result<TimeGrid> {
        TimeGrid::graded(self.t_end, self.m, self.gamma).map_err(|e| Error::Spec(e.to_string()))
    }
}

/// Initial data of a scheme run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSpec {
    Zero,
    LowMode { amplitude: f64 },
    /// Seeded by the manifest seed.
    Random { amplitude: f64, kmax: i64, decay: f64 },
    CurlBump { amplitude: f64, width: f64 },
    Catalogue { profile: CatalogueProfile, amplitude: f64 },
}

impl DataSpec {
    fn build(&self, grid: Grid, seed: u64) -> Result<Field> {
        Ok(match self {
            DataSpec::Zero => Field::zeros(grid, grid.dim),
            DataSpec::LowMode { amplitude } => low_mode_flow(grid, *amplitude)?,
            DataSpec::Random { amplitude, kmax, decay } => random_solenoidal(grid, seed, *kmax, *decay)?.scale(*amplitude),
            DataSpec::CurlBump { amplitude, width } => curl_bump(grid, *width, [1.0, 0.5, 0.2])?.scale(*amplitude),
            DataSpec::Catalogue { profile, amplitude } => profile.field(grid)?.scale(*amplitude),
        })
    }
}

/// Force carried by the low-mode flow profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ForceSpec {
    None,
    Constant { amplitude: f64 },
    Periodic { amplitude: f64 },
}

impl ForceSpec {
    fn build(&self, grid: Grid, time: &TimeGrid) -> Result<Trajectory> {
        let mode = || low_mode_flow(grid, 1.0);
        match self {
            ForceSpec::None => Ok(Trajectory::zeros(time.clone(), grid, grid.dim)),
            ForceSpec::Constant { amplitude } => Ok(Trajectory::constant(time.clone(), &mode()?.scale(*amplitude))),
            ForceSpec::Periodic { amplitude } => {
                let m = mode()?;
                Trajectory::from_fn(time.clone(), |s| Ok(m.scale(amplitude * s.sin())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSetup {
    pub variant: SchemeVariant,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub data: DataSpec,
    pub force: ForceSpec,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub kato: Option<KatoExponents>,
}

/// Everything a scheme run needs, built and validated.
pub struct PreparedScheme {
    pub cfg: SchemeConfig,
    pub a: Field,
    pub f: Trajectory,
    pub consts: EmpiricalConstants,
}

impl SchemeSetup {
    pub fn prepare(&self, seed: u64) -> Result<PreparedScheme> {
        let grid = self.grid.build()?;
        let time = self.time.build()?;
        let mut cfg = SchemeConfig::new(self.variant, grid, time);
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.kato {
            cfg.kato = v;
        }
        cfg.validate().map_err(|e| Error::Spec(e.to_string()))?;
        let a = self.data.build(grid, seed).map_err(|e| Error::Spec(e.to_string()))?;
        let f = self.force.build(grid, &cfg.time).map_err(|e| Error::Spec(e.to_string()))?;
        let family = ProbeFamily { seed, ..ProbeFamily::default() };
        let consts = calibrate(self.variant, grid, &cfg.time, &family, &cfg.kato)?;
        Ok(PreparedScheme { cfg, a, f, consts })
    }
}

impl PreparedScheme {
    pub fn run(&self) -> Result<SchemeRun> {
        run_scheme(&self.a, &self.f, &self.cfg, &self.consts)
    }

    /// Force restricted to the nodes a run actually covers.
    pub fn force_for(&self, run: &SchemeRun) -> Result<Trajectory> {
        self.f.prefix(run.u.time().intervals())
    }

    pub fn form(&self) -> IntegralForm {
        match self.cfg.variant {
            SchemeVariant::GlobalWeak | SchemeVariant::LocalShifted => IntegralForm::IEstar,
            SchemeVariant::GlobalMild | SchemeVariant::Kato => IntegralForm::IE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    /// Weak and Banach-envelope norms of the catalogue profiles.
    Norm { grid: GridSpec, p: f64 },
    /// Smoothing exponents of the heat semigroup on `e^{σΔ}|x|^{-n/p}`.
    SemigroupRate { grid: GridSpec, p: f64, r: f64, t_min: f64, t_max: f64, count: usize, tolerance: f64 },
    Picard { scheme: SchemeSetup },
    Xsigma { grid: GridSpec },
    VerifyStrong { scheme: SchemeSetup, window: (f64, f64), threshold: Option<f64> },
    Uniqueness { first: SchemeSetup, second: SchemeSetup, split: Option<usize> },
    Brezis { scheme: SchemeSetup, r: f64 },
    CriticalConstants { grid: GridSpec, horizon: f64, m: usize, p_modi: f64, p_meyer: f64 },
    Suite { members: Vec<ExperimentSpec> },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Norm { .. } => "norm",
            Experiment::SemigroupRate { .. } => "semigroup-rate",
            Experiment::Picard { .. } => "picard",
            Experiment::Xsigma { .. } => "xsigma",
            Experiment::VerifyStrong { .. } => "verify-strong",
            Experiment::Uniqueness { .. } => "uniqueness",
            Experiment::Brezis { .. } => "brezis",
            Experiment::CriticalConstants { .. } => "critical-constants",
            Experiment::Suite { .. } => "suite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }
}

/// Assertion lines of one experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub passed: bool,
}

impl Outcome {
    fn new() -> Self {
        Outcome { lines: Vec::new(), passed: true }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.lines.push(format!("{} {line}", if ok { "PASS" } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("INFO {line}"));
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Runs a manifest into `out` and returns the exit status.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> i32 {
    let (code, lines) = match execute(spec, out) {
        Ok(o) => (if o.passed { 0 } else { 1 }, o.lines),
        Err(e @ Error::Refused { .. }) => (2, vec![format!("REFUSED {e}")]),
        Err(e @ (Error::Spec(_) | Error::Json(_))) => (3, vec![format!("INVALID {e}")]),
        Err(e) => (1, vec![format!("ERROR {e}")]),
    };
    let status = match code {
        0 => "pass",
        1 => "fail",
        2 => "refused",
        _ => "invalid",
    };
    let write = || -> Result<()> {
        std::fs::create_dir_all(out)?;
        let mut w = create(out, "summary.txt")?;
        writeln!(w, "experiment {} status {status}", spec.experiment.kind())?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    };
    if write().is_err() && code == 0 {
        return 1;
    }
    code
}

/// Executes a manifest, writing its outputs; refusals and invalid
/// manifests surface as errors.
pub fn execute(spec: &ExperimentSpec, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out)?;
    serde_json::to_writer_pretty(create(out, "spec.json")?, spec)?;
    let seed = spec.seed;
    let mut o = Outcome::new();
    match &spec.experiment {
        Experiment::Norm { grid, p } => {
            let grid = grid.build()?;
            if !(*p > 1.0) {
                return Err(Error::Spec(format!("norm exponent {p} must exceed 1")));
            }
            let mut rows = Vec::new();
            for prof in CatalogueProfile::ALL {
                let f = prof.field(grid)?;
                let (w, b) = (weak_norm(&f, *p)?, ledger_norm(&f, *p)?);
                o.check(w.is_finite() && w > 0.0 && b >= w * (1.0 - 1e-12), format!("{} weak {} banach {}", prof.name(), fmt17(w), fmt17(b)));
                rows.push(vec![prof.name().to_string(), fmt17(*p), fmt17(w), fmt17(b)]);
            }
            write_csv(create(out, "norms.csv")?, &["profile", "p", "weak", "banach"], rows)?;
        }
        Experiment::SemigroupRate { grid, p, r, t_min, t_max, count, tolerance } => {
            let grid = grid.build()?;
            let n = grid.dim as f64;
            if !(*p > 1.0 && r > p && *t_min > 0.0 && t_max > t_min && *count >= 5) {
                return Err(Error::Spec("semigroup-rate needs 1 < p < r, 0 < t_min < t_max and count >= 5".into()));
            }
            let times: Vec<f64> = (0..*count).map(|i| t_min * (t_max / t_min).powf(i as f64 / (*count - 1) as f64)).collect();
            let (f0, f1, plain, grad) = semigroup_series(grid, *p, *r, &times)?;
            let target = -(n / 2.0) * (1.0 / p - 1.0 / r);
            o.check((f0.slope - target).abs() <= *tolerance, format!("slope {} target {}", fmt17(f0.slope), fmt17(target)));
            o.check((f1.slope - target + 0.5).abs() <= *tolerance, format!("gradient slope {} target {}", fmt17(f1.slope), fmt17(target - 0.5)));
            let rows = (0..times.len()).map(|i| vec![fmt17(times[i]), fmt17(plain[i]), fmt17(grad[i])]);
            write_csv(create(out, "rates.csv")?, &["t", "norm", "gradient_norm"], rows)?;
        }
        Experiment::Picard { scheme } => {
            let prep = scheme.prepare(seed)?;
            let run = prep.run()?;
            run.write_outputs(&prep.cfg, out)?;
            let res = residual_integral_equation(&run.u, &prep.a, &prep.force_for(&run)?, prep.form())?;
            o.check(run.ledger.converged, format!("converged after {} sweeps", run.ledger.records.len()));
            o.check(run.ledger.law_holds(), "ledger recurrence holds at every iteration".into());
            if matches!(prep.cfg.variant, SchemeVariant::GlobalWeak | SchemeVariant::GlobalMild) {
                o.check(run.ledger.uniform_bound_holds(), "uniform bound K_m <= 2 K_0".into());
            }
            o.check(res <= 10.0 * prep.cfg.tol, format!("integral-equation residual {}", fmt17(res)));
            o.note(format!("T_loc {}", fmt17(run.t_loc)));
        }
        Experiment::Xsigma { grid } => {
            let grid = grid.build()?;
            let results = run_catalogue(grid, &MembershipThresholds::default())?;
            for r in &results {
                let name = r.entry.profile.name();
                r.decision.sweep.write_csv(create(out, &format!("sweep_{name}.csv"))?)?;
                o.check(r.matches(), format!("{name} decided {:?}, expected {:?}: {}", r.decision.decision, r.entry.expected, r.decision.reason));
            }
            write_catalogue_manifest(create(out, "catalogue.json")?, &results)?;
        }
        Experiment::VerifyStrong { scheme, window, threshold } => {
            let prep = scheme.prepare(seed)?;
            let run = prep.run()?;
            let de = verify_strong_de(&run.u, &prep.force_for(&run)?, *window, true)?;
            de.write_csv(create(out, "strong_residual.csv")?)?;
            match threshold {
                Some(t) => o.check(de.residual <= *t, format!("strong residual {} threshold {}", fmt17(de.residual), fmt17(*t))),
                None => o.note(format!("strong residual {}", fmt17(de.residual))),
            }
        }
        Experiment::Uniqueness { first, second, split } => {
            let p1 = first.prepare(seed)?;
            let p2 = second.prepare(seed)?;
            if p1.a.grid() != p2.a.grid() || p1.a.sub(&p2.a)?.max_abs() != 0.0 {
                return Err(Error::Spec("uniqueness needs identical initial data for both schemes".into()));
            }
            let rep = uniqueness_compare(&p1.a, [&p1.f, &p2.f], [&p1.cfg, &p2.cfg], [&p1.consts, &p2.consts])?;
            serde_json::to_writer_pretty(create(out, "uniqueness.json")?, &rep)?;
            o.check(rep.status == Agreement::Agree, format!("difference {} residuals {:?}: {:?}", fmt17(rep.difference), rep.residuals, rep.status));
            if let Some(k) = split {
                let c = continuation_check(&p1.a, &p1.f, &p1.cfg, &p1.consts, *k)?;
                serde_json::to_writer_pretty(create(out, "continuation.json")?, &c)?;
                o.check(c.status == Agreement::Agree, format!("continuation across {} difference {}", fmt17(c.t_max), fmt17(c.difference)));
            }
        }
        Experiment::Brezis { scheme, r } => {
            let prep = scheme.prepare(seed)?;
            if !(*r > prep.cfg.grid.dim as f64) {
                return Err(Error::Spec(format!("Brezis exponent {r} must exceed n")));
            }
            let run = prep.run()?;
            let rep = brezis_decay_profile(&run.u, *r)?;
            rep.write_csv(create(out, "brezis.csv")?)?;
            o.check(rep.holds, format!("gamma decreases to zero as t -> 0 (last {})", fmt17(*rep.gamma.last().unwrap_or(&0.0))));
        }
        Experiment::CriticalConstants { grid, horizon, m, p_modi, p_meyer } => {
            let grid = grid.build()?;
            let time = TimeGrid::uniform(*horizon, *m).map_err(|e| Error::Spec(e.to_string()))?;
            let mut probes = Vec::new();
            for (i, w) in [[1.0, 0.5, 0.2], [0.0, 0.0, 1.0], [0.3, -1.0, 0.6]].iter().enumerate() {
                let g = curl_bump(grid, 1.5, *w)?.without_mean();
                let traj = Trajectory::constant(time.clone(), &g);
                for (variant, p) in [(CriticalVariant::Modi, *p_modi), (CriticalVariant::Meyer, *p_meyer)] {
                    let r = critical_estimate_ratio(&traj, p, variant)?;
                    o.check(r.ratio.is_finite() && r.ratio > 0.0, format!("probe {i} {} ratio {}", variant.name(), fmt17(r.ratio)));
                    probes.push((format!("curl_bump_{i}"), r));
                }
            }
            write_probe_csv(create(out, "critical.csv")?, &probes)?;
        }
        Experiment::Suite { members } => {
            for (i, m) in members.iter().enumerate() {
                let sub = out.join(format!("{i:02}_{}", m.experiment.kind()));
                let code = run_experiment(m, &sub);
                o.check(code == 0, format!("member {i:02} {} exit {code}", m.experiment.kind()));
            }
        }
    }
    Ok(o)
}

fn small_setup(variant: SchemeVariant, data: DataSpec, time: TimeSpec) -> SchemeSetup {
    SchemeSetup {
        variant,
        grid: GridSpec { dim: 3, n: 16, length: std::f64::consts::TAU },
        time,
        data,
        force: ForceSpec::None,
        max_iter: None,
        tol: Some(1e-11),
        theta: None,
        kato: None,
    }
}

/// Desk-scale default manifest for each CLI subcommand.
pub fn default_spec(kind: &str, seed: u64) -> Result<ExperimentSpec> {
    let t1 = TimeSpec { t_end: 1.0, m: 32, gamma: 2.0 };
    let experiment = match kind {
        "norm" => Experiment::Norm { grid: GridSpec { dim: 3, n: 64, length: 20.0 }, p: 3.0 },
        "semigroup-rate" => Experiment::SemigroupRate {
            grid: GridSpec { dim: 3, n: 128, length: 7.0 },
            p: 3.0,
            r: 6.0,
            t_min: 1e-2,
            t_max: 1.0,
            count: 9,
            tolerance: 0.05,
        },
        "picard" => Experiment::Picard { scheme: small_setup(SchemeVariant::GlobalWeak, DataSpec::LowMode { amplitude: 1.0 }, t1) },
        "xsigma" => Experiment::Xsigma { grid: GridSpec { dim: 3, n: 128, length: 20.0 } },
        "verify-strong" => Experiment::VerifyStrong {
            scheme: small_setup(SchemeVariant::Kato, DataSpec::LowMode { amplitude: 1.0 }, TimeSpec { t_end: 1.0, m: 128, gamma: 2.0 }),
            window: (0.1, 1.0),
            threshold: None,
        },
        "uniqueness" => Experiment::Uniqueness {
            first: small_setup(SchemeVariant::GlobalWeak, DataSpec::LowMode { amplitude: 1.0 }, t1),
            second: small_setup(SchemeVariant::GlobalMild, DataSpec::LowMode { amplitude: 1.0 }, t1),
            split: Some(20),
        },
        "brezis" => Experiment::Brezis { scheme: small_setup(SchemeVariant::Kato, DataSpec::LowMode { amplitude: 1.0 }, t1), r: 6.0 },
        "critical-constants" => Experiment::CriticalConstants {
            grid: GridSpec { dim: 3, n: 32, length: 20.0 },
            horizon: 200.0,
            m: 64,
            p_modi: 1.2,
            p_meyer: 1.5,
        },
        "suite" => {
            let quick = |experiment| ExperimentSpec { experiment, seed, out: None };
            Experiment::Suite {
                members: vec![
                    quick(Experiment::Norm { grid: GridSpec { dim: 3, n: 32, length: 20.0 }, p: 3.0 }),
                    quick(Experiment::Picard { scheme: small_setup(SchemeVariant::GlobalWeak, DataSpec::LowMode { amplitude: 1.0 }, TimeSpec { t_end: 1.0, m: 16, gamma: 2.0 }) }),
                    quick(Experiment::Picard {
                        scheme: small_setup(SchemeVariant::GlobalWeak, DataSpec::Random { amplitude: 1.0, kmax: 2, decay: 0.5 }, TimeSpec { t_end: 1.0, m: 16, gamma: 2.0 }),
                    }),
                    quick(Experiment::Brezis { scheme: small_setup(SchemeVariant::Kato, DataSpec::LowMode { amplitude: 1.0 }, TimeSpec { t_end: 1.0, m: 16, gamma: 2.0 }), r: 6.0 }),
                    quick(Experiment::CriticalConstants { grid: GridSpec { dim: 3, n: 16, length: 20.0 }, horizon: 100.0, m: 16, p_modi: 1.2, p_meyer: 1.5 }),
                ],
            }
        }
        other => return Err(Error::Spec(format!("unknown experiment kind {other}"))),
    };
    Ok(ExperimentSpec { experiment, seed, out: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duhamel::duhamel_force_all;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law_fit() {
        let t: Vec<f64> = (0..8).map(|i| 0.01 * 2f64.powi(i)).collect();
        let v: Vec<f64> = t.iter().map(|x| 3.0 * x.powf(-0.25)).collect();
        let f = decay_rate_fit(&t, &v).unwrap();
        assert!((f.slope + 0.25).abs() < 1e-10);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_series() {
        let t = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(decay_rate_fit(&t, &[1.0, 2.0, 0.0, 1.0, 1.0]).is_err());
        assert!(decay_rate_fit(&t[..4], &[1.0; 4]).is_err());
    }

    #[test]
    fn noisy_fit_stays_close() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let t: Vec<f64> = (0..9).map(|i| 0.01 * 10f64.powf(i as f64 / 4.0)).collect();
        let clean: Vec<f64> = t.iter().map(|x| x.powf(-0.75)).collect();
        let noisy: Vec<f64> = clean.iter().map(|v| v * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))).collect();
        let a = decay_rate_fit(&t, &clean).unwrap().slope;
        let b = decay_rate_fit(&t, &noisy).unwrap().slope;
        assert!((a - b).abs() < 0.02);
    }

    #[test]
    fn strong_window_must_avoid_zero() {
        let grid = Grid::new(3, 8, 4.0).unwrap();
        let time = TimeGrid::uniform(1.0, 4).unwrap();
        let u = Trajectory::zeros(time.clone(), grid, 3);
        assert!(verify_strong_de(&u, &u, (0.0, 1.0), true).is_err());
        assert!(verify_strong_de(&u, &u, (0.5, 0.4), true).is_err());
    }

    fn linear_residual(m: usize) -> f64 {
        let grid = Grid::new(3, 16, 20.0).unwrap();
        let time = TimeGrid::graded(0.5, m, 2.0).unwrap();
        let a = low_mode_flow(grid, 1.0).unwrap();
        let f = Trajectory::zeros(time.clone(), grid, 3);
        let u = Trajectory::heat_flow(time, &a).unwrap().add(&duhamel_force_all(&f).unwrap()).unwrap();
        verify_strong_de(&u, &f, (0.05, 0.5), false).unwrap().residual
    }

    #[test]
    fn linear_strong_residual_is_second_order() {
        let (r128, r256) = (linear_residual(128), linear_residual(256));
        assert!(r256 <= 1e-6, "residual {r256}");
        let order = (r128 / r256).log2();
        assert!(order > 1.8, "order {order}");
    }

    #[test]
    fn brezis_rules() {
        let grid = Grid::new(3, 8, 4.0).unwrap();
        let time = TimeGrid::uniform(1.0, 8).unwrap();
        let u = Trajectory::zeros(time, grid, 3);
        assert!(brezis_decay_profile(&u, 3.0).is_err());
        let rep = brezis_decay_profile(&u, 6.0).unwrap();
        assert!(rep.gamma.iter().all(|g| *g == 0.0));
        assert!(rep.holds);
    }

    #[test]
    fn heat_flow_gamma_vanishes_at_zero() {
        let grid = Grid::new(3, 16, std::f64::consts::TAU).unwrap();
        let time = TimeGrid::graded(1.0, 16, 2.0).unwrap();
        let u = Trajectory::heat_flow(time, &low_mode_flow(grid, 1.0).unwrap()).unwrap();
        let rep = brezis_decay_profile(&u, 6.0).unwrap();
        assert!(rep.holds, "{:?}", rep.trend);
        assert!(rep.orbit_modulus.iter().zip(&rep.gamma).all(|(d, g)| *d >= *g * (1.0 - 1e-12) || *g == 0.0));
    }

    #[test]
    fn spec_round_trip_and_kind() {
        for kind in ["norm", "semigroup-rate", "picard", "xsigma", "verify-strong", "uniqueness", "brezis", "critical-constants", "suite"] {
            let s = default_spec(kind, 3).unwrap();
            assert_eq!(s.experiment.kind(), kind);
            let text = serde_json::to_string(&s).unwrap();
            assert_eq!(ExperimentSpec::from_json(&text).unwrap(), s);
        }
        assert!(default_spec("bogus", 0).is_err());
        assert!(ExperimentSpec::from_json("{\"kind\": \"norm\"}").is_err());
    }

    proptest! {
        #[test]
        fn fit_recovers_power_laws(slope in -3.0f64..3.0, c in 0.01f64..100.0, t0 in 1e-4f64..1.0, k in 5usize..20) {
            let t: Vec<f64> = (0..k).map(|i| t0 * 1.5f64.powi(i as i32)).collect();
            let v: Vec<f64> = t.iter().map(|x| c * x.powf(slope)).collect();
            let f = decay_rate_fit(&t, &v).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-9);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        }
    }
}
