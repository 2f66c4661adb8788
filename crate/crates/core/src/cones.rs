//! Finite-window cone tests for spectral paths.
//!
//! Every test reduces a path to a trace of window statistics over increasing
//! radii and applies a fixed rule to it. Labels depend on the trace and the
//! thresholds only ([`ConeVerdict::relabel`] recomputes them). Thresholds on
//! absolute levels are taken relative to the path's maximum over its whole
//! grid, so that `u·f` and `f` get the same labels.

use serde::{Deserialize, Serialize};

use crate::catalog::SpectralPath;
use crate::error::{invalid, Error, Result};
use crate::grid::{Domain, Grid, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Hopf,
    Neveu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Conservative,
    Dissipative,
    Positive,
    Null,
    Inconclusive,
}

impl Label {
    pub fn is_conclusive(self) -> bool {
        self != Label::Inconclusive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Conservative => "conservative",
            Label::Dissipative => "dissipative",
            Label::Positive => "positive",
            Label::Null => "null",
            Label::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Integral,
    Decay,
    Cesaro,
    SupLocal,
    Weighted,
}

impl TestKind {
    pub fn axis(self) -> Axis {
        match self {
            TestKind::Integral | TestKind::Decay | TestKind::SupLocal => Axis::Hopf,
            TestKind::Cesaro | TestKind::Weighted => Axis::Neveu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub eps_rel: f64,
    pub eps_abs: f64,
    /// Number of trailing radius steps the rules look back over.
    pub growth_window: usize,
    pub floor: f64,
    /// Log-log slope of the Cesàro averages below which the path is null.
    pub null_slope: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { eps_rel: 0.01, eps_abs: 0.05, growth_window: 4, floor: 0.1, null_slope: -0.1 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.eps_rel) || !pos(self.eps_abs) || !pos(self.floor) {
            return Err(invalid("eps_rel, eps_abs and floor must be positive"));
        }
        if self.growth_window < 2 {
            return Err(invalid("growth_window must be at least 2"));
        }
        if !self.null_slope.is_finite() {
            return Err(invalid("null_slope must be finite"));
        }
        Ok(())
    }
}

/// One radius of a cone trace. Values are raw (not divided by the scale).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub radius: f64,
    /// `λ(B_r)` of the grid surrogate.
    pub volume: f64,
    /// `I_r`: quadrature of the path over `B_r`.
    pub integral: f64,
    /// `A_r = I_r / λ(B_r)`.
    pub average: f64,
    /// Max over the annulus `B_r \ B_{r/2}`.
    pub annulus_sup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeVerdict {
    pub test: TestKind,
    pub axis: Axis,
    pub label: Label,
    /// Max of the classified path over its grid.
    pub scale: f64,
    pub thresholds: Thresholds,
    pub trace: Vec<TraceRow>,
}

impl ConeVerdict {
    fn new(test: TestKind, scale: f64, thresholds: Thresholds, trace: Vec<TraceRow>) -> Self {
        let label = decide(test, &trace, scale, &thresholds);
        Self { test, axis: test.axis(), label, scale, thresholds, trace }
    }

    /// The label the rules assign to this trace; always equals `label`.
    pub fn relabel(&self) -> Label {
        decide(self.test, &self.trace, self.scale, &self.thresholds)
    }
}

/// Dyadic radii `2^3..=2^10` that fit in `window_radius`. Small windows get the
/// four largest dyadic radii they can hold.
pub fn default_radii(window_radius: f64) -> Vec<f64> {
    let mut r: Vec<f64> = (3..=10).map(|k| 2f64.powi(k)).filter(|r| *r <= window_radius).collect();
    if r.len() < 4 {
        let top = window_radius.log2().floor() as i32;
        r = (top - 3..=top).map(|k| 2f64.powi(k)).collect();
    }
    r
}

fn check_radii(grid: &Grid, radii: &[f64]) -> Result<()> {
    if radii.len() < 4 {
        return Err(invalid(format!("at least 4 radii are needed, got {}", radii.len())));
    }
    if radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
        return Err(invalid("radii must be positive and strictly increasing"));
    }
    let window = grid.radius();
    if radii[radii.len() - 1] > window * (1.0 + 1e-12) {
        return Err(invalid(format!("largest radius {} exceeds the path window {window}", radii[radii.len() - 1])));
    }
    Ok(())
}

fn volume(grid: &Grid, r: f64) -> f64 {
    let h = grid.spacing();
    let side = 2.0 * (r / h + 1e-9).floor() + 1.0;
    (side * h).powi(grid.dim() as i32)
}

/// `I_r`, `A_r` and annulus sups of a path at every radius.
pub fn trace(path: &SpectralPath, radii: &[f64]) -> Result<Vec<TraceRow>> {
    let grid = path.grid();
    check_radii(grid, radii)?;
    let k = radii.len();
    let mut mass = vec![0.0; k];
    let mut inner_sup = vec![0.0f64; k];
    for p in 0..grid.len() {
        let n = grid.norm(p);
        // First radius containing the point.
        let j = radii.partition_point(|r| *r < n - 1e-9 * r.max(1.0));
        if j < k {
            mass[j] += path.masses()[p];
        }
        let v = path.values()[p];
        // Annulus (r/2, r] for every radius with r/2 < n <= r.
        for (i, r) in radii.iter().enumerate().skip(j) {
            if n > 0.5 * r {
                inner_sup[i] = inner_sup[i].max(v);
            } else {
                break;
            }
        }
    }
    let mut rows = Vec::with_capacity(k);
    let mut integral = 0.0;
    for i in 0..k {
        integral += mass[i];
        let vol = volume(grid, radii[i]);
        rows.push(TraceRow {
            radius: radii[i],
            volume: vol,
            integral,
            average: integral / vol,
            annulus_sup: inner_sup[i],
        });
    }
    Ok(rows)
}

fn nonzero_scale(path: &SpectralPath) -> Result<f64> {
    if path.is_zero() {
        return Err(Error::ZeroPath);
    }
    Ok(path.max())
}

fn decide(test: TestKind, trace: &[TraceRow], scale: f64, t: &Thresholds) -> Label {
    let n = trace.len();
    let w = t.growth_window.min(n - 1);
    let last = &trace[n - 1];
    let tail = &trace[n - w..];
    let rel_growth = |a: &TraceRow, b: &TraceRow| {
        if b.integral > 0.0 {
            (b.integral - a.integral) / b.integral
        } else {
            0.0
        }
    };
    match test {
        TestKind::Integral | TestKind::SupLocal => {
            if rel_growth(&trace[n - 1 - w], last) < t.eps_rel {
                Label::Dissipative
            } else if tail.iter().all(|r| r.average / scale >= t.floor) {
                Label::Conservative
            } else {
                Label::Inconclusive
            }
        }
        TestKind::Decay => {
            let s = |r: &TraceRow| r.annulus_sup / scale;
            if s(last) < t.eps_abs && s(&trace[n - 2]) < t.eps_abs {
                Label::Dissipative
            } else if s(last) >= t.floor && tail.iter().filter(|r| s(r) >= t.floor).count() >= w.div_ceil(2) {
                Label::Conservative
            } else {
                Label::Inconclusive
            }
        }
        TestKind::Cesaro => {
            let a = |r: &TraceRow| r.average / scale;
            let min_tail = tail.iter().map(a).fold(f64::INFINITY, f64::min);
            if min_tail < t.eps_abs {
                return Label::Null;
            }
            let xs: Vec<f64> = tail.iter().map(|r| r.radius.ln()).collect();
            let ys: Vec<f64> = tail.iter().map(|r| a(r).ln()).collect();
            if crate::stats::slope(&xs, &ys) < t.null_slope {
                return Label::Null;
            }
            let prev = a(&trace[n - 2]);
            if a(last) >= t.floor && (a(last) / prev - 1.0).abs() < t.eps_rel {
                Label::Positive
            } else {
                Label::Inconclusive
            }
        }
        TestKind::Weighted => {
            let inc = rel_growth(&trace[n - 1 - w], last);
            if inc < t.eps_rel {
                Label::Null
            } else if last.integral > 0.0
                && last.integral - trace[n - 2].integral >= t.eps_rel * last.integral
                && trace[n - 2].integral - trace[n - 3].integral >= t.eps_rel * last.integral
            {
                Label::Positive
            } else {
                Label::Inconclusive
            }
        }
    }
}

/// Hopf axis: does `∫ f dλ` converge over the window ladder?
pub fn integral_test(path: &SpectralPath, radii: &[f64], thresholds: &Thresholds) -> Result<ConeVerdict> {
    thresholds.validate()?;
    let scale = nonzero_scale(path)?;
    Ok(ConeVerdict::new(TestKind::Integral, scale, *thresholds, trace(path, radii)?))
}

/// Hopf axis, decay variant: do annulus sups vanish?
pub fn decay_test(path: &SpectralPath, radii: &[f64], thresholds: &Thresholds) -> Result<ConeVerdict> {
    thresholds.validate()?;
    let scale = nonzero_scale(path)?;
    Ok(ConeVerdict::new(TestKind::Decay, scale, *thresholds, trace(path, radii)?))
}

/// Neveu axis: limit behaviour of the Cesàro averages `A_r`.
pub fn cesaro_test(path: &SpectralPath, radii: &[f64], thresholds: &Thresholds) -> Result<ConeVerdict> {
    thresholds.validate()?;
    let scale = nonzero_scale(path)?;
    Ok(ConeVerdict::new(TestKind::Cesaro, scale, *thresholds, trace(path, radii)?))
}

/// Running max over `[-k, k]^d` index offsets; the box is clipped at the grid
/// edge.
fn sup_smooth(grid: &Grid, values: &[f64], k: i64) -> Vec<f64> {
    let mut cur = values.to_vec();
    for axis in 0..grid.dim() {
        let mut next = vec![0.0; cur.len()];
        for (p, idx) in grid.indices().iter().enumerate() {
            let mut lo = *idx;
            let mut hi = *idx;
            lo[axis] -= k;
            hi[axis] += k;
            let mut m = 0.0f64;
            grid.for_each_in_box(lo, hi, |q, _| m = m.max(cur[q]));
            next[p] = m;
        }
        cur = next;
    }
    cur
}

/// Hopf axis on the `K`-sup-smoothed path, `K = [-halfwidth, halfwidth]^d`.
pub fn sup_local_test(
    path: &SpectralPath,
    halfwidth: f64,
    radii: &[f64],
    thresholds: &Thresholds,
) -> Result<ConeVerdict> {
    thresholds.validate()?;
    let grid = path.grid();
    if grid.domain() == Domain::Lattice {
        return Err(Error::Unsupported("the sup-local test is vacuous on lattices".into()));
    }
    if !grid.is_full_box() {
        return Err(invalid("the sup-local test needs a full box grid"));
    }
    if !(halfwidth > 0.0) || grid.spacing() > halfwidth / 4.0 {
        return Err(invalid(format!(
            "spacing {} must be at most a quarter of the halfwidth {halfwidth}",
            grid.spacing()
        )));
    }
    let scale = nonzero_scale(path)?;
    let k = (halfwidth / grid.spacing() + 1e-9).floor() as i64;
    let smooth = SpectralPath::from_values(grid.clone(), sup_smooth(grid, path.values(), k))?;
    Ok(ConeVerdict::new(TestKind::SupLocal, scale, *thresholds, trace(&smooth, radii)?))
}

/// Positive integrable weights, non-increasing in `|x|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    /// `e^{-rate |x|}`
    Exponential { rate: f64 },
    /// `(1 + |x|)^{-exponent}`, `exponent > 1`
    Power { exponent: f64 },
}

impl WeightFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightFunction::Exponential { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            WeightFunction::Power { exponent } if exponent > 1.0 && exponent.is_finite() => Ok(()),
            _ => Err(invalid(format!("weight {self:?} is not integrable"))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            WeightFunction::Exponential { rate } => (-rate * x.abs()).exp(),
            WeightFunction::Power { exponent } => (1.0 + x.abs()).powf(-exponent),
        }
    }

    /// `∫_ℝ w`.
    pub fn integral(&self) -> f64 {
        match *self {
            WeightFunction::Exponential { rate } => 2.0 / rate,
            WeightFunction::Power { exponent } => 2.0 / (exponent - 1.0),
        }
    }
}

/// Neveu axis evidence from `∫ f w dλ`; reported next to the Cesàro test.
pub fn weighted_test(
    path: &SpectralPath,
    w: &WeightFunction,
    radii: &[f64],
    thresholds: &Thresholds,
) -> Result<ConeVerdict> {
    thresholds.validate()?;
    w.validate()?;
    if path.grid().dim() != 1 {
        return Err(Error::Unsupported("the weighted test is one-dimensional".into()));
    }
    let scale = nonzero_scale(path)?;
    let weighted = path.weighted(|x: Point| w.eval(x[0]));
    Ok(ConeVerdict::new(TestKind::Weighted, scale, *thresholds, trace(&weighted, radii)?))
}

/// Labels attached to a classified atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomLabels {
    /// Integral test.
    pub hopf: Label,
    /// Decay test.
    pub decay: Label,
    /// Cesàro test.
    pub neveu: Label,
    /// Integral and decay tests reached opposite first-class labels.
    pub dual_conflict: bool,
}

impl AtomLabels {
    pub fn on(&self, axis: Axis) -> Label {
        match axis {
            Axis::Hopf => self.hopf,
            Axis::Neveu => self.neveu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathClassification {
    pub integral: ConeVerdict,
    pub decay: ConeVerdict,
    pub cesaro: ConeVerdict,
    pub sup_local: Option<ConeVerdict>,
    pub dual_conflict: bool,
}

impl PathClassification {
    pub fn labels(&self) -> AtomLabels {
        AtomLabels {
            hopf: self.integral.label,
            decay: self.decay.label,
            neveu: self.cesaro.label,
            dual_conflict: self.dual_conflict,
        }
    }
}

/// Whether two hopf-axis labels are conclusive and opposite.
pub fn dual_conflict(a: Label, b: Label) -> bool {
    matches!((a, b), (Label::Conservative, Label::Dissipative) | (Label::Dissipative, Label::Conservative))
}

/// Integral, decay and Cesàro tests on one shared trace, plus the sup-local
/// test when `sup_local_halfwidth` is given on a continuous grid.
pub fn classify_path(
    path: &SpectralPath,
    radii: &[f64],
    thresholds: &Thresholds,
    sup_local_halfwidth: Option<f64>,
) -> Result<PathClassification> {
    thresholds.validate()?;
    let scale = nonzero_scale(path)?;
    let tr = trace(path, radii)?;
    let integral = ConeVerdict::new(TestKind::Integral, scale, *thresholds, tr.clone());
    let decay = ConeVerdict::new(TestKind::Decay, scale, *thresholds, tr.clone());
    let cesaro = ConeVerdict::new(TestKind::Cesaro, scale, *thresholds, tr);
    let sup_local = match sup_local_halfwidth {
        Some(hw) if path.grid().domain() == Domain::Continuous => Some(sup_local_test(path, hw, radii, thresholds)?),
        _ => None,
    };
    let dual_conflict = dual_conflict(integral.label, decay.label);
    Ok(PathClassification { integral, decay, cesaro, sup_local, dual_conflict })
}
