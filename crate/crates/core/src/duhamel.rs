//! Duhamel integrals by per-mode product integration.
//!
//! On each interval `[s_j, s_{j+1}]` of length `h` the integrand's Fourier
//! coefficient is interpolated linearly and integrated exactly against the
//! heat kernel `exp(-(t - s)|xi|^2)`. With `z = |xi|^2 h`,
//! `psi0 = (1 - e^{-z})/z` and `psi1 = (1 - e^{-z}(1 + z))/z^2`,
//!
//! ```text
//! F_{j+1} = e^{-z} F_j + h psi1 g_j + h (psi0 - psi1) g_{j+1}
//! ```
//!
//! which is exact for piecewise-linear data and satisfies the semigroup
//! cocycle exactly at the nodes.

use std::io::Write;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::io::{fmt17, write_csv};
use crate::lorentz::lorentz_quasinorm;
use crate::spectral::{convective_spectrum, forward, inverse, tensor_spectrum, Lattice, Spectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    grading: Option<f64>,
}

impl TimeGrid {
    /// Nodes `s_j = T (j/M)^γ`, `j = 0..=M`.
    pub fn graded(t_end: f64, m: usize, gamma: f64) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) || m < 2 || !(gamma >= 1.0) {
            return Err(Error::InvalidParameter(format!("graded grid needs T > 0, M >= 2, gamma >= 1; got {t_end}, {m}, {gamma}")));
        }
        let nodes = (0..=m).map(|j| t_end * (j as f64 / m as f64).powf(gamma)).collect();
        Ok(Self { nodes, grading: Some(gamma) })
    }

    pub fn uniform(t_end: f64, m: usize) -> Result<Self> {
        Self::graded(t_end, m, 1.0)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 || nodes[0] != 0.0 {
            return Err(Error::InvalidParameter("time grid needs s_0 = 0 and M >= 2".into()));
        }
        if !nodes.windows(2).all(|w| w[1] > w[0]) || !nodes.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidParameter("time nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes, grading: None })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn grading(&self) -> Option<f64> {
        self.grading
    }

    /// Number of intervals `M`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.nodes.iter().position(|&s| s == t).ok_or(Error::NotANode(t))
    }

    /// Grid restricted to `[0, s_j]`.
    pub fn prefix(&self, j: usize) -> Result<TimeGrid> {
        if j < 2 || j >= self.nodes.len() {
            return Err(Error::InvalidParameter(format!("prefix end {j} leaves fewer than two intervals")));
        }
        Ok(Self { nodes: self.nodes[..=j].to_vec(), grading: self.grading })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    time: TimeGrid,
    fields: Vec<Field>,
}

impl Trajectory {
    pub fn new(time: TimeGrid, fields: Vec<Field>) -> Result<Self> {
        if fields.len() != time.nodes.len() {
            return Err(Error::Shape(format!("{} fields for {} nodes", fields.len(), time.nodes.len())));
        }
        for f in &fields[1..] {
            f.check_compatible(&fields[0])?;
        }
        Ok(Self { time, fields })
    }

    pub fn from_fn(time: TimeGrid, mut f: impl FnMut(f64) -> Result<Field>) -> Result<Self> {
        let fields = time.nodes.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        Self::new(time, fields)
    }

    pub fn constant(time: TimeGrid, f: &Field) -> Self {
        let fields = vec![f.clone(); time.nodes.len()];
        Self { time, fields }
    }

    pub fn zeros(time: TimeGrid, grid: Grid, comps: usize) -> Self {
        Self::constant(time, &Field::zeros(grid, comps))
    }

    /// `t ↦ e^{tΔ} a` on the nodes.
    pub fn heat_flow(time: TimeGrid, a: &Field) -> Result<Self> {
        let s = forward(a);
        Self::from_fn(time, |t| {
            let mut st = s.clone();
            st.heat(t)?;
            Ok(inverse(&st))
        })
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn at(&self, j: usize) -> &Field {
        &self.fields[j]
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    pub fn comps(&self) -> usize {
        self.fields[0].comps()
    }

    pub fn prefix(&self, j: usize) -> Result<Trajectory> {
        Ok(Self { time: self.time.prefix(j)?, fields: self.fields[..=j].to_vec() })
    }

    pub fn check_compatible(&self, other: &Trajectory) -> Result<()> {
        if self.time != other.time {
            return Err(Error::Mismatch("trajectories on different time grids".into()));
        }
        self.fields[0].check_compatible(&other.fields[0])
    }

    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        self.check_compatible(other)?;
        let fields = self.fields.iter().zip(&other.fields).map(|(a, b)| a.add(b)).collect::<Result<_>>()?;
        Ok(Self { time: self.time.clone(), fields })
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        self.check_compatible(other)?;
        let fields = self.fields.iter().zip(&other.fields).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
        Ok(Self { time: self.time.clone(), fields })
    }

    pub fn scale(&self, s: f64) -> Trajectory {
        Self { time: self.time.clone(), fields: self.fields.iter().map(|f| f.scale(s)).collect() }
    }

    pub fn map(&self, mut f: impl FnMut(&Field) -> Result<Field>) -> Result<Trajectory> {
        let fields = self.fields.iter().map(|x| f(x)).collect::<Result<Vec<_>>>()?;
        Self::new(self.time.clone(), fields)
    }

    /// Per-node values of a norm.
    pub fn norms(&self, norm: impl Fn(&Field) -> Result<f64>) -> Result<Vec<f64>> {
        self.fields.iter().map(norm).collect()
    }

    pub fn sup(&self, norm: impl Fn(&Field) -> Result<f64>) -> Result<f64> {
        Ok(self.norms(norm)?.into_iter().fold(0.0, f64::max))
    }
}

/// `(psi0, psi1)` of the module docs.
fn psi(z: f64) -> (f64, f64) {
    if z < 0.5 {
        psi_series(z)
    } else {
        psi_closed(z)
    }
}

fn psi_series(z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (0.0, 0.0);
    let mut term = 1.0; // (-z)^k / k!
    for k in 0..30 {
        let k = k as f64;
        p0 += term / (k + 1.0);
        p1 += term / (k + 2.0);
        term *= -z / (k + 1.0);
    }
    (p0, p1)
}

fn psi_closed(z: f64) -> (f64, f64) {
    let e = (-z).exp();
    (-(-z).exp_m1() / z, (1.0 - e * (1.0 + z)) / (z * z))
}

/// Decay, left and right weights of one interval for every mode.
fn interval_weights(lam: &[f64], h: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut e = Vec::with_capacity(lam.len());
    let mut wa = Vec::with_capacity(lam.len());
    let mut wb = Vec::with_capacity(lam.len());
    for &l in lam {
        let z = l * h;
        let (p0, p1) = psi(z);
        e.push((-z).exp());
        wa.push(h * p1);
        wb.push(h * (p0 - p1));
    }
    (e, wa, wb)
}

/// Runs the product-integration recurrence over nodes `0..=upto`, returning
/// `F(s_0), ..., F(s_upto)` as spectra. `integrand(j)` supplies the already
/// multiplied integrand at node `j`.
pub fn march(time: &TimeGrid, upto: usize, mut integrand: impl FnMut(usize) -> Result<Spectrum>) -> Result<Vec<Spectrum>> {
    if upto >= time.nodes.len() {
        return Err(Error::InvalidParameter(format!("node {upto} beyond grid")));
    }
    let mut g_prev = integrand(0)?;
    let grid = *g_prev.grid();
    let comps = g_prev.comps();
    let p = grid.points();
    let lam = Lattice::new(&grid).eigenvalues();
    let mut out = vec![Spectrum::zeros(grid, comps)];
    for j in 0..upto {
        let g_next = integrand(j + 1)?;
        g_next.check_compatible(&g_prev)?;
        let (e, wa, wb) = interval_weights(&lam, time.nodes[j + 1] - time.nodes[j]);
        let mut f = out[j].clone();
        for c in 0..comps {
            let (fc, ga, gb) = (f.component_mut(c), g_prev.component(c), g_next.component(c));
            for i in 0..p {
                fc[i] = fc[i] * e[i] + ga[i] * wa[i] + gb[i] * wb[i];
            }
        }
        out.push(f);
        g_prev = g_next;
    }
    Ok(out)
}

fn to_trajectory(time: &TimeGrid, spectra: &[Spectrum]) -> Result<Trajectory> {
    let n = spectra.len() - 1;
    let time = if n == time.intervals() { time.clone() } else { time.prefix(n)? };
    Trajectory::new(time, spectra.iter().map(inverse).collect())
}

fn require_vector(f: &Trajectory, what: &str) -> Result<()> {
    if !f.at(0).is_vector() {
        return Err(Error::Shape(format!("{what} needs a vector trajectory")));
    }
    Ok(())
}

/// `∫_0^{s_j} e^{(s_j - s)Δ} P f(s) ds` at every node.
pub fn duhamel_force_all(f: &Trajectory) -> Result<Trajectory> {
    require_vector(f, "Duhamel force")?;
    let spectra = march(&f.time, f.time.intervals(), |j| {
        let mut s = forward(f.at(j));
        s.project()?;
        Ok(s)
    })?;
    to_trajectory(&f.time, &spectra)
}

/// Same integral with the projection applied after integration, the order
/// used when the force is only integrable.
pub fn duhamel_force_post_projected(f: &Trajectory) -> Result<Trajectory> {
    require_vector(f, "Duhamel force")?;
    let mut spectra = march(&f.time, f.time.intervals(), |j| Ok(forward(f.at(j))))?;
    for s in &mut spectra {
        s.project()?;
    }
    to_trajectory(&f.time, &spectra)
}

/// Duhamel force at the node `t`; no interpolation between nodes.
pub fn duhamel_force(f: &Trajectory, t: f64) -> Result<Field> {
    require_vector(f, "Duhamel force")?;
    let j = f.time.index_of(t)?;
    let spectra = march(&f.time, j, |i| {
        let mut s = forward(f.at(i));
        s.project()?;
        Ok(s)
    })?;
    Ok(inverse(spectra.last().unwrap()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearForm {
    /// `-P ∇·(u ⊗ v)`
    Tensor,
    /// `-P (u·∇) v`
    Convective,
}

/// Integrand of `G` or `G*` from the spectra of `u(s)` and `v(s)`.
pub fn nonlinear_integrand(us: &Spectrum, vs: &Spectrum, form: NonlinearForm) -> Result<Spectrum> {
    let mut s = match form {
        NonlinearForm::Tensor => tensor_spectrum(us, vs)?.tensor_divergence()?,
        NonlinearForm::Convective => convective_spectrum(us, vs)?,
    };
    s.project()?;
    s.scale(-1.0);
    Ok(s)
}

fn nonlinear_march(u: &Trajectory, v: &Trajectory, upto: usize, form: NonlinearForm) -> Result<Vec<Spectrum>> {
    u.check_compatible(v)?;
    require_vector(u, "nonlinear Duhamel term")?;
    let same = std::ptr::eq(u, v);
    march(&u.time, upto, |j| {
        let us = forward(u.at(j));
        if same {
            nonlinear_integrand(&us, &us, form)
        } else {
            nonlinear_integrand(&us, &forward(v.at(j)), form)
        }
    })
}

/// Bilinear Duhamel term at every node.
pub fn duhamel_nonlinear_all(u: &Trajectory, v: &Trajectory, form: NonlinearForm) -> Result<Trajectory> {
    let spectra = nonlinear_march(u, v, u.time.intervals(), form)?;
    to_trajectory(&u.time, &spectra)
}

#[allow(non_snake_case)]
pub fn duhamel_G_all(u: &Trajectory, v: &Trajectory) -> Result<Trajectory> {
    duhamel_nonlinear_all(u, v, NonlinearForm::Tensor)
}

#[allow(non_snake_case)]
pub fn duhamel_Gstar_all(u: &Trajectory, v: &Trajectory) -> Result<Trajectory> {
    duhamel_nonlinear_all(u, v, NonlinearForm::Convective)
}

#[allow(non_snake_case)]
pub fn duhamel_G(u: &Trajectory, v: &Trajectory, t: f64) -> Result<Field> {
    let j = u.time.index_of(t)?;
    Ok(inverse(nonlinear_march(u, v, j, NonlinearForm::Tensor)?.last().unwrap()))
}

#[allow(non_snake_case)]
pub fn duhamel_Gstar(u: &Trajectory, v: &Trajectory, t: f64) -> Result<Field> {
    let j = u.time.index_of(t)?;
    Ok(inverse(nonlinear_march(u, v, j, NonlinearForm::Convective)?.last().unwrap()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalVariant {
    /// `‖∫ e^{sΔ} P g‖_{q,∞}` with `1/p - 1/q = 2/n`
    Modi,
    /// `‖∇ ∫ e^{sΔ} P g‖_{q,∞}` with `1/p - 1/q = 1/n`
    Meyer,
}

impl CriticalVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Modi => "modi",
            Self::Meyer => "meyer",
        }
    }

    /// Target exponent `q` for source exponent `p`, with the range check.
    pub fn target_exponent(&self, p: f64, n: usize) -> Result<f64> {
        let n = n as f64;
        let (upper, gap) = match self {
            Self::Modi => (n / 2.0, 2.0 / n),
            Self::Meyer => (n, 1.0 / n),
        };
        if !(p > 1.0 && p < upper) {
            return Err(Error::InvalidParameter(format!("{} estimate needs 1 < p < {upper}, got {p}", self.name())));
        }
        Ok(1.0 / (1.0 / p - gap))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRatio {
    pub variant: CriticalVariant,
    pub p: f64,
    pub q: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub horizon: f64,
    /// Sup-norm bound of the neglected `∫_S^∞`, assuming each mode of `g`
    /// stays below its sampled maximum; infinite if the mean mode is active.
    pub tail_bound: f64,
}

/// Measures `lhs / rhs` for the horizon-uniform Duhamel estimates.
pub fn critical_estimate_ratio(g: &Trajectory, p: f64, variant: CriticalVariant) -> Result<CriticalRatio> {
    require_vector(g, "critical estimate")?;
    let grid = *g.grid();
    let q = variant.target_exponent(p, grid.dim)?;
    let nodes = g.time.nodes();
    let spectra: Vec<Spectrum> = g
        .fields
        .iter()
        .map(|f| {
            let mut s = forward(f);
            s.project()?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let lam = Lattice::new(&grid).eigenvalues();
    let p_pts = grid.points();
    let comps = g.comps();
    let mut acc = Spectrum::zeros(grid, comps);
    for j in 0..g.time.intervals() {
        let h = nodes[j + 1] - nodes[j];
        for c in 0..comps {
            let (a, b) = (spectra[j].component(c), spectra[j + 1].component(c));
            let out = acc.component_mut(c);
            for i in 0..p_pts {
                let (p0, p1) = psi(lam[i] * h);
                let decay = (-lam[i] * nodes[j]).exp();
                out[i] += (a[i] * (h * (p0 - p1)) + b[i] * (h * p1)) * decay;
            }
        }
    }
    let (lhs_field, symbol_mag): (Field, Box<dyn Fn(f64) -> f64>) = match variant {
        CriticalVariant::Modi => (inverse(&acc), Box::new(|_| 1.0)),
        CriticalVariant::Meyer => (inverse(&acc.gradient()), Box::new(|l: f64| l.sqrt())),
    };
    let lhs = lorentz_quasinorm(&lhs_field, q, f64::INFINITY)?;
    let rhs = g.sup(|f| lorentz_quasinorm(f, p, f64::INFINITY))?;
    let horizon = g.time.t_end();
    let mut tail = 0.0;
    let scale = spectra.iter().flat_map(|s| s.data().iter().map(|z| z.norm())).fold(0.0, f64::max);
    for i in 0..p_pts {
        let peak = spectra.iter().map(|s| (0..comps).map(|c| s.component(c)[i].norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max);
        if peak <= 1e-14 * scale {
            continue;
        }
        if lam[i] == 0.0 {
            tail = f64::INFINITY;
            break;
        }
        tail += peak * symbol_mag(lam[i]) * (-lam[i] * horizon).exp() / lam[i];
    }
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(CriticalRatio { variant, p, q, lhs, rhs, ratio, horizon, tail_bound: tail })
}

/// Probe report with columns `probe,p,q,variant,lhs,rhs,ratio,S,tail_bound`.
pub fn write_probe_csv<W: Write>(w: W, probes: &[(String, CriticalRatio)]) -> Result<()> {
    let rows = probes.iter().map(|(id, r)| {
        vec![
            id.clone(),
            fmt17(r.p),
            fmt17(r.q),
            r.variant.name().to_string(),
            fmt17(r.lhs),
            fmt17(r.rhs),
            fmt17(r.ratio),
            fmt17(r.horizon),
            fmt17(r.tail_bound),
        ]
    });
    write_csv(w, &["probe", "p", "q", "variant", "lhs", "rhs", "ratio", "S", "tail_bound"], rows)
}

/// Zero-valued complex constant for callers assembling spectra by hand.
pub const CZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
