//! Monte Carlo estimators for the ergodicity, mixing and mixed-moving-maximum
//! criteria, and the verdict rules built on them.
//!
//! All estimators draw replications through [`replicate`], so results depend
//! on the stream only, never on the thread count.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{Shape, SpectralModel, SpectralSampler};
use crate::cones::{classify_path, default_radii, AtomLabels, Label, Thresholds};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Mesh};
use crate::rng::{PoissonArrivals, RngStream};
use crate::sim::{
    field_streams, m3_comb, replicate, simulate_m3, simulate_with, threshold_tau, M3Config, M3ShapeLaw, MaxStableField,
    SimConfig, StopRule,
};
use crate::stats::{ks_two_sample, mean_se, quantile_sorted, sorted, wilson};

pub const DYADIC_LAGS: [f64; 9] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0];
pub const GENERIC_LAGS: [f64; 7] = [3.0, 5.0, 11.0, 23.0, 47.0, 97.0, 199.0];
pub const DELTAS: [f64; 3] = [0.05, 0.1, 0.2];
/// Standard errors used by every interval rule.
pub const WILSON_Z: f64 = 3.0;
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticConfig {
    /// Spectral paths drawn for curves, exceedances and classification.
    pub n_paths: usize,
    pub dyadic_lags: Vec<f64>,
    pub generic_lags: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Radii for Cesàro curves and path classification.
    pub radii: Vec<f64>,
    pub thresholds: Thresholds,
    /// Field replications for θ̂ and for the local-boundedness proxy.
    pub theta_reps: usize,
    /// θ̂ is taken over `K = [0, theta_window]^d`.
    pub theta_window: f64,
    pub z_values: Vec<f64>,
    pub identity_lags: Vec<f64>,
    pub identity_reps: usize,
    /// Atoms per field for unbounded models.
    pub n_atoms: usize,
    /// Atoms per field in the bivariate identity for unbounded models.
    pub identity_atoms: usize,
    /// Placement radius given to translated-shape models that do not set one.
    pub placement_radius: f64,
    /// Base padding `ρ₀` of the local-boundedness proxy; defaults to the shape's
    /// support radius (8 for the comb).
    pub proxy_padding: Option<f64>,
    /// θ̂(4ρ₀)/θ̂(ρ₀) above which sups are flagged divergent.
    pub proxy_ratio: f64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            dyadic_lags: DYADIC_LAGS.to_vec(),
            generic_lags: GENERIC_LAGS.to_vec(),
            deltas: DELTAS.to_vec(),
            radii: default_radii(1024.0),
            thresholds: Thresholds::default(),
            theta_reps: 4000,
            theta_window: 1.0,
            z_values: vec![0.5, 1.0, 2.0],
            identity_lags: vec![1.0],
            identity_reps: 10_000,
            n_atoms: crate::sim::DEFAULT_FIXED_ATOMS,
            identity_atoms: 2000,
            placement_radius: 4.0,
            proxy_padding: None,
            proxy_ratio: 1.5,
        }
    }
}

impl DiagnosticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 100 {
            return Err(invalid("n_paths must be at least 100"));
        }
        for (name, v) in [("dyadic_lags", &self.dyadic_lags), ("generic_lags", &self.generic_lags)] {
            if v.len() < 2 || v.windows(2).any(|w| !(w[0] < w[1])) || !(v[0] > 0.0) {
                return Err(invalid(format!("{name} must hold at least two increasing positive lags")));
            }
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("deltas must be positive"));
        }
        if self.z_values.is_empty() || self.z_values.iter().any(|z| !(*z > 0.0)) {
            return Err(invalid("z_values must be positive"));
        }
        if self.theta_reps == 0 || self.identity_reps == 0 || self.n_atoms == 0 || self.identity_atoms == 0 {
            return Err(invalid("empty run: replication and atom counts must be positive"));
        }
        if !(self.theta_window > 0.0) || !(self.placement_radius > 0.0) || !(self.proxy_ratio > 1.0) {
            return Err(invalid("theta_window, placement_radius must be positive and proxy_ratio above 1"));
        }
        self.thresholds.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lag: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagFamily {
    Dyadic,
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRow {
    pub delta: f64,
    pub family: LagFamily,
    pub lag: f64,
    pub count: usize,
    pub n: usize,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CesaroRow {
    pub radius: f64,
    /// `Ĉ(r)`: window average of `m̂`.
    pub c_hat: f64,
    pub c_se: f64,
    /// Median and deciles of the per-path `A_r`.
    pub median: f64,
    pub decile_lo: f64,
    pub decile_hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub z: f64,
    pub p: f64,
    pub theta: f64,
    pub se: f64,
    /// False when `P̂ = 0` (log singularity).
    pub usable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityEstimate {
    pub lag: f64,
    pub scale: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub gap: f64,
    pub pooled_se: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub conservative: usize,
    pub dissipative: usize,
    pub positive: usize,
    pub null: usize,
    pub inconclusive: usize,
}

impl LabelCounts {
    fn add(&mut self, l: Label) {
        match l {
            Label::Conservative => self.conservative += 1,
            Label::Dissipative => self.dissipative += 1,
            Label::Positive => self.positive += 1,
            Label::Null => self.null += 1,
            Label::Inconclusive => self.inconclusive += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.conservative + self.dissipative + self.positive + self.null + self.inconclusive
    }

    pub fn fraction(&self, l: Label) -> f64 {
        let k = match l {
            Label::Conservative => self.conservative,
            Label::Dissipative => self.dissipative,
            Label::Positive => self.positive,
            Label::Null => self.null,
            Label::Inconclusive => self.inconclusive,
        };
        if self.total() == 0 {
            0.0
        } else {
            k as f64 / self.total() as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTally {
    pub n_paths: usize,
    /// Paths vanishing on the window; not classified.
    pub zero_paths: usize,
    pub integral: LabelCounts,
    pub decay: LabelCounts,
    pub cesaro: LabelCounts,
    pub dual_conflicts: usize,
}

impl ClassificationTally {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a Option<AtomLabels>>) -> Self {
        let mut t = Self::default();
        for l in labels {
            t.n_paths += 1;
            match l {
                None => t.zero_paths += 1,
                Some(l) => {
                    t.integral.add(l.hopf);
                    t.decay.add(l.decay);
                    t.cesaro.add(l.neveu);
                    t.dual_conflicts += l.dual_conflict as usize;
                }
            }
        }
        t
    }

    pub fn dual_fraction(&self) -> f64 {
        let n = self.integral.total();
        if n == 0 {
            0.0
        } else {
            self.dual_conflicts as f64 / n as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyKind {
    /// θ̂ of mixed-moving-maximum fields at paddings `ρ₀` and `4ρ₀`.
    M3Padding,
    /// θ̂ of de Haan fields; only finiteness is checked.
    DeHaanTheta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyResult {
    pub kind: ProxyKind,
    pub z: f64,
    pub padding: Option<f64>,
    pub theta_base: f64,
    pub theta_wide: Option<f64>,
    pub ratio: Option<f64>,
    pub divergent: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Supported,
    Rejected,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub evidence: Vec<String>,
}

impl Verdict {
    fn new(outcome: Outcome, evidence: Vec<String>) -> Self {
        Self { outcome, evidence }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub ergodic: Verdict,
    pub mixing: Verdict,
    pub m3: Verdict,
    /// Set when conflicting evidence forced every verdict to inconclusive.
    pub conflict: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub stream_id: u64,
    pub n_paths: usize,
    pub theta_reps: usize,
    pub identity_reps: usize,
    /// Whether the simulated fields were exact (threshold stopping).
    pub exact_fields: bool,
    pub n_atoms: Option<usize>,
    pub window_radius: f64,
    pub toolkit_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub schema_version: u32,
    pub model: SpectralModel,
    pub mesh: Mesh,
    pub config: DiagnosticConfig,
    pub provenance: Provenance,
    pub min_expectation: Vec<CurvePoint>,
    pub exceedance: Vec<ExceedanceRow>,
    pub cesaro: Vec<CesaroRow>,
    pub theta: Vec<ThetaRow>,
    pub identity: Vec<IdentityEstimate>,
    pub classification: ClassificationTally,
    pub proxy: ProxyResult,
    pub verdicts: Verdicts,
}

// ---------------------------------------------------------------------------
// Per-path statistics

struct PathStats {
    /// `Y` at each requested lag position.
    at_lags: Vec<f64>,
    /// Per radius: `A_r` and the window integral of `Y(x) ∧ Y(0)`.
    averages: Vec<f64>,
    min_integrals: Vec<f64>,
    labels: Option<AtomLabels>,
}

struct Batch<'a> {
    sampler: &'a SpectralSampler,
    origin: usize,
    lag_positions: Vec<usize>,
    radii: &'a [f64],
    thresholds: &'a Thresholds,
    classify: bool,
}

impl Batch<'_> {
    fn run(&self, n: usize, stream: &RngStream) -> Result<Vec<PathStats>> {
        let grid = self.sampler.grid().clone();
        let norms: Vec<f64> = (0..grid.len()).map(|p| grid.norm(p)).collect();
        let cell = grid.cell_measure();
        replicate(n, stream, |_, s| {
            let f = self.sampler.draw(&s);
            let path = self.sampler.path_of(&f)?;
            let v = path.values();
            let y0 = v[self.origin];
            let at_lags = self.lag_positions.iter().map(|&p| v[p]).collect();
            let mut min_integrals = vec![0.0; self.radii.len()];
            if y0 > 0.0 {
                for (p, y) in v.iter().enumerate() {
                    let m = y.min(y0) * cell;
                    if m > 0.0 {
                        for (k, r) in self.radii.iter().enumerate() {
                            if norms[p] <= r * (1.0 + 1e-12) {
                                min_integrals[k] += m;
                            }
                        }
                    }
                }
            }
            let (averages, labels) = if path.is_zero() {
                (vec![0.0; self.radii.len()], None)
            } else if self.classify {
                let c = classify_path(&path, self.radii, self.thresholds, None)?;
                (c.integral.trace.iter().map(|r| r.average).collect(), Some(c.labels()))
            } else {
                let t = crate::cones::trace(&path, self.radii)?;
                (t.iter().map(|r| r.average).collect(), None)
            };
            Ok(PathStats { at_lags, averages, min_integrals, labels })
        })
    }
}

fn lag_positions(grid: &Grid, mesh: &Mesh, lags: &[f64]) -> Result<Vec<usize>> {
    lags.iter()
        .map(|&l| {
            let i = mesh.index_of(l)?;
            grid.position([i, 0]).ok_or_else(|| invalid(format!("lag {l} is outside the window")))
        })
        .collect()
}

fn curve(lags: &[f64], stats: &[PathStats]) -> Vec<CurvePoint> {
    // at_lags[0] is lag 0.
    lags.iter()
        .enumerate()
        .map(|(k, &lag)| {
            let xs: Vec<f64> = stats.iter().map(|s| s.at_lags[k].min(s.at_lags[0])).collect();
            let (mean, se) = mean_se(&xs);
            CurvePoint { lag, mean, se }
        })
        .collect()
}

fn cesaro_rows(grid: &Grid, radii: &[f64], stats: &[PathStats]) -> Vec<CesaroRow> {
    let h = grid.spacing();
    radii
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let vol = ((2.0 * (r / h + 1e-9).floor() + 1.0) * h).powi(grid.dim() as i32);
            let c: Vec<f64> = stats.iter().map(|s| s.min_integrals[k] / vol).collect();
            let (c_hat, c_se) = mean_se(&c);
            let a = sorted(&stats.iter().map(|s| s.averages[k]).collect::<Vec<_>>());
            CesaroRow {
                radius: r,
                c_hat,
                c_se,
                median: quantile_sorted(&a, 0.5),
                decile_lo: quantile_sorted(&a, 0.1),
                decile_hi: quantile_sorted(&a, 0.9),
            }
        })
        .collect()
}

fn exceedance_rows(
    deltas: &[f64],
    families: &[(LagFamily, &[f64])],
    all_lags: &[f64],
    stats: &[PathStats],
) -> Vec<ExceedanceRow> {
    let n = stats.len();
    let mut rows = Vec::new();
    for &delta in deltas {
        for (family, lags) in families {
            for &lag in lags.iter() {
                let k = all_lags.iter().position(|l| *l == lag).expect("lag in ladder");
                let count = stats.iter().filter(|s| s.at_lags[k] > delta).count();
                let (lo, hi) = wilson(count, n, WILSON_Z);
                rows.push(ExceedanceRow { delta, family: *family, lag, count, n, p: count as f64 / n as f64, lo, hi });
            }
        }
    }
    rows
}

fn ladder(cfg: &DiagnosticConfig) -> Vec<f64> {
    let mut lags = vec![0.0];
    lags.extend(&cfg.dyadic_lags);
    lags.extend(&cfg.generic_lags);
    lags.sort_by(f64::total_cmp);
    lags.dedup();
    lags
}

// ---------------------------------------------------------------------------
// Standalone estimators

/// `m̂(x) = mean of Y(x) ∧ Y(0)` over independent spectral paths, lags along
/// the first axis.
pub fn est_min_expectation(
    model: &SpectralModel,
    mesh: &Mesh,
    lags: &[f64],
    n_reps: usize,
    stream: &RngStream,
) -> Result<Vec<CurvePoint>> {
    if n_reps < 100 {
        return Err(invalid("n_reps must be at least 100"));
    }
    let mut all = vec![0.0];
    all.extend(lags.iter().copied().filter(|l| *l != 0.0));
    let grid = Arc::new(mesh.axis_points(&all)?);
    let sampler = model.prepare(&grid)?;
    let positions = lag_positions(&grid, mesh, &all)?;
    let stats: Vec<Vec<f64>> = replicate(n_reps, stream, |_, s| {
        let path = sampler.path_of(&sampler.draw(&s))?;
        Ok(positions.iter().map(|&p| path.values()[p]).collect())
    })?;
    Ok(lags
        .iter()
        .map(|&lag| {
            let k = all.iter().position(|l| *l == lag).expect("lag present");
            let xs: Vec<f64> = stats.iter().map(|s| s[k].min(s[0])).collect();
            let (mean, se) = mean_se(&xs);
            CurvePoint { lag, mean, se }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CesaroCurve {
    pub rows: Vec<CesaroRow>,
}

/// `Ĉ(r)` and per-path Cesàro medians over the given radii.
pub fn est_cesaro_criterion(
    model: &SpectralModel,
    mesh: &Mesh,
    radii: &[f64],
    n_reps: usize,
    stream: &RngStream,
) -> Result<CesaroCurve> {
    if n_reps == 0 {
        return Err(invalid("empty run"));
    }
    let grid = Arc::new(mesh.window(*radii.last().ok_or_else(|| invalid("no radii"))?)?);
    let sampler = model.prepare(&grid)?;
    let origin = grid.position([0, 0]).expect("window holds the origin");
    let thresholds = Thresholds::default();
    let batch = Batch {
        sampler: &sampler,
        origin,
        lag_positions: vec![origin],
        radii,
        thresholds: &thresholds,
        classify: false,
    };
    let stats = batch.run(n_reps, stream)?;
    Ok(CesaroCurve { rows: cesaro_rows(&grid, radii, &stats) })
}

/// Sup of each field over the grid points in `K`.
pub fn window_sups(fields: &[MaxStableField], k: &Grid) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            let mut m = 0.0f64;
            for idx in k.indices() {
                m = m.max(f.value_at(*idx).ok_or_else(|| invalid("K is not inside the field grid"))?);
            }
            Ok(m)
        })
        .collect()
}

/// `θ̂(z) = -z log P̂[sup_K η ≤ z]` from per-replication sups.
pub fn est_theta(sups: &[f64], zs: &[f64]) -> Vec<ThetaRow> {
    let n = sups.len() as f64;
    zs.iter()
        .map(|&z| {
            let p = sups.iter().filter(|s| **s <= z).count() as f64 / n;
            if p == 0.0 {
                ThetaRow { z, p, theta: f64::INFINITY, se: f64::INFINITY, usable: false }
            } else {
                ThetaRow { z, p, theta: -z * p.ln(), se: z * ((1.0 - p) / (n * p)).sqrt(), usable: true }
            }
        })
        .collect()
}

/// Sups over `K` of `n_reps` de Haan fields simulated on `K` itself.
pub fn theta_sups_dehaan(
    model: &SpectralModel,
    k: &Arc<Grid>,
    n_reps: usize,
    n_atoms: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    let sampler = model.prepare(k)?;
    let cfg = SimConfig::for_model(model, n_atoms);
    replicate(n_reps, stream, |_, s| {
        Ok(simulate_with(&sampler, &s, &cfg)?.values().iter().copied().fold(0.0, f64::max))
    })
}

/// Sups over `K` of `n_reps` mixed-moving-maximum fields on `K`.
pub fn theta_sups_m3(
    law: &M3ShapeLaw,
    k: &Arc<Grid>,
    padding: f64,
    n_reps: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    let cfg = M3Config { padding: Some(padding), ..M3Config::default() };
    replicate(n_reps, stream, |_, s| Ok(simulate_m3(law, k, &s, &cfg)?.values().iter().copied().fold(0.0, f64::max)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub point: f64,
    pub ks: f64,
}

/// Two-sample KS distance, per point, between `(1/n)·max` of `n` independent
/// fields and directly simulated fields.
pub fn max_stability_test(
    model: &SpectralModel,
    mesh: &Mesh,
    points: &[f64],
    n: usize,
    n_reps: usize,
    n_atoms: usize,
    stream: &RngStream,
) -> Result<Vec<KsRow>> {
    if n < 2 {
        return Err(invalid("max-stability needs n >= 2"));
    }
    if n_reps == 0 {
        return Err(invalid("empty run"));
    }
    let grid = Arc::new(mesh.axis_points(points)?);
    let sampler = model.prepare(&grid)?;
    let cfg = SimConfig::for_model(model, n_atoms);
    let direct_stream = stream.substream(0);
    let folded_stream = stream.substream(1);
    let direct = replicate(n_reps, &direct_stream, |_, s| Ok(simulate_with(&sampler, &s, &cfg)?.values().to_vec()))?;
    let folded = replicate(n_reps, &folded_stream, |_, s| {
        let mut m = vec![0.0f64; grid.len()];
        for j in 0..n {
            let f = simulate_with(&sampler, &s.substream(j as u64), &cfg)?;
            for (a, b) in m.iter_mut().zip(f.values()) {
                *a = a.max(*b);
            }
        }
        Ok(m.into_iter().map(|v| v / n as f64).collect::<Vec<f64>>())
    })?;
    let positions = lag_positions(&grid, mesh, points)?;
    Ok(points
        .iter()
        .zip(positions)
        .map(|(&x, p)| {
            let a: Vec<f64> = direct.iter().map(|v| v[p]).collect();
            let b: Vec<f64> = folded.iter().map(|v| v[p]).collect();
            KsRow { point: x, ks: ks_two_sample(&a, &b) }
        })
        .collect())
}

/// Whether the field built from the sampler's atoms stays `≤ level` at every
/// grid point. Draws the same atoms as [`simulate_with`] and stops as soon as
/// the answer is known.
fn field_below(sampler: &SpectralSampler, stream: &RngStream, cfg: &SimConfig, level: f64) -> Result<bool> {
    let tau = threshold_tau(&cfg.stop, sampler.sup_bound())?;
    let limit = match cfg.stop {
        StopRule::FixedN { n_atoms } => n_atoms,
        StopRule::Threshold { .. } => usize::MAX,
    };
    let (arrival_stream, atom_stream) = field_streams(stream);
    let mut arrivals = PoissonArrivals::new(arrival_stream.rng());
    let mut values = vec![0.0; sampler.grid().len()];
    for i in 0..limit {
        let u = arrivals.next().expect("arrivals never end");
        if let Some(t) = tau {
            if u * t <= level {
                return Ok(true);
            }
        }
        let f = sampler.draw(&atom_stream.substream(i as u64));
        sampler.fold(&f, u, &mut values)?;
        if values.iter().any(|v| *v > level) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Both sides of `E[Y(x) ∧ Y(0)] = 2c + log P[η(x) ≤ 1, η(0) ≤ 1]`, `c` the
/// model's scale (`c = 1` gives the familiar `2 + log P`): the left from
/// spectral paths, the right from independent field simulations.
pub fn est_bivariate_identity(
    model: &SpectralModel,
    mesh: &Mesh,
    lag: f64,
    n_reps: usize,
    n_atoms: usize,
    stream: &RngStream,
) -> Result<IdentityEstimate> {
    if n_reps == 0 {
        return Err(invalid("empty run"));
    }
    let coords: Vec<f64> = if lag == 0.0 { vec![0.0] } else { vec![0.0, lag] };
    let grid = Arc::new(mesh.axis_points(&coords)?);
    let scale = model.mean_value(&grid)?;
    let sampler = model.prepare(&grid)?;
    let positions = lag_positions(&grid, mesh, &coords)?;
    let (p0, px) = (positions[0], positions[positions.len() - 1]);
    let mins = replicate(n_reps, &stream.substream(0), |_, s| {
        let path = sampler.path_of(&sampler.draw(&s))?;
        Ok(path.values()[p0].min(path.values()[px]))
    })?;
    let (lhs, lhs_se) = mean_se(&mins);
    let cfg = SimConfig::for_model(model, n_atoms);
    let below = replicate(n_reps, &stream.substream(1), |_, s| field_below(&sampler, &s, &cfg, 1.0))?;
    let n = n_reps as f64;
    let p = below.iter().filter(|b| **b).count() as f64 / n;
    if p == 0.0 {
        return Err(Error::LogOfZero(format!("no replication had both values below 1 at lag {lag}")));
    }
    let rhs = 2.0 * scale + p.ln();
    let rhs_se = ((1.0 - p) / (n * p)).sqrt();
    let pooled_se = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    Ok(IdentityEstimate { lag, scale, lhs, lhs_se, rhs, rhs_se, gap: lhs - rhs, pooled_se })
}

/// Local-boundedness proxy. For translated shapes, θ̂ over `K` from
/// mixed-moving-maximum fields at paddings `ρ₀` and `4ρ₀`; for other models,
/// finiteness of θ̂ from de Haan fields.
pub fn local_boundedness_proxy(
    model: &SpectralModel,
    k: &Arc<Grid>,
    cfg: &DiagnosticConfig,
    stream: &RngStream,
) -> Result<ProxyResult> {
    let (law_at, base): (Box<dyn Fn(f64) -> Result<M3ShapeLaw>>, f64) = match model {
        SpectralModel::CompactBump { shape, .. } => {
            let shape = shape.clone();
            let base = cfg.proxy_padding.unwrap_or(shape.support_radius());
            (Box::new(move |_| Ok(M3ShapeLaw::Fixed { shape: shape.clone() })), base)
        }
        SpectralModel::Comb { bumps, .. } => {
            let fixed = *bumps;
            let law = move |pad: f64| -> Result<M3ShapeLaw> {
                let shape = match fixed {
                    Some(n) => Shape::Comb { bumps: n },
                    None => m3_comb(pad)?,
                };
                Ok(M3ShapeLaw::Fixed { shape })
            };
            let base = cfg.proxy_padding.unwrap_or(match bumps {
                Some(n) => *n as f64 + 1.0,
                None => 8.0,
            });
            (Box::new(law), base)
        }
        _ => {
            let sups = theta_sups_dehaan(model, k, cfg.theta_reps, cfg.n_atoms, stream)?;
            let z = crate::stats::median(&sups);
            let row = est_theta(&sups, &[z])[0];
            return Ok(ProxyResult {
                kind: ProxyKind::DeHaanTheta,
                z,
                padding: None,
                theta_base: row.theta,
                theta_wide: None,
                ratio: None,
                divergent: !row.theta.is_finite(),
            });
        }
    };
    let small = theta_sups_m3(&law_at(base)?, k, base, cfg.theta_reps, &stream.substream(0))?;
    let wide = theta_sups_m3(&law_at(4.0 * base)?, k, 4.0 * base, cfg.theta_reps, &stream.substream(1))?;
    let z = crate::stats::median(&small);
    let t0 = est_theta(&small, &[z])[0].theta;
    let t1 = est_theta(&wide, &[z])[0].theta;
    let ratio = t1 / t0;
    Ok(ProxyResult {
        kind: ProxyKind::M3Padding,
        z,
        padding: Some(base),
        theta_base: t0,
        theta_wide: Some(t1),
        ratio: Some(ratio),
        divergent: !(ratio <= cfg.proxy_ratio),
    })
}

// ---------------------------------------------------------------------------
// Verdicts

/// Inputs of the verdict rules.
pub struct Evidence<'a> {
    pub cesaro: &'a [CesaroRow],
    pub exceedance: &'a [ExceedanceRow],
    pub classification: &'a ClassificationTally,
    pub proxy: &'a ProxyResult,
}

const ERGODIC_STEP: f64 = 0.9;
const ERGODIC_FLAT: f64 = 0.99;
const M3_DISSIPATIVE: f64 = 0.95;
const M3_CONSERVATIVE: f64 = 0.05;
const DUAL_CONFLICT: f64 = 0.05;

fn ergodic_verdict(rows: &[CesaroRow]) -> Verdict {
    let mut ev = Vec::new();
    let mut all_decay = rows.len() >= 2;
    for w in rows.windows(2) {
        let ratio = if w[0].median > 0.0 { w[1].median / w[0].median } else { 0.0 };
        ev.push(format!(
            "median A_r {:.4e} -> {:.4e} (r {} -> {}), ratio {:.3}",
            w[0].median, w[1].median, w[0].radius, w[1].radius, ratio
        ));
        if !(ratio <= ERGODIC_STEP || w[1].median == 0.0) {
            all_decay = false;
        }
    }
    let last_ratio = match rows {
        [.., a, b] if a.median > 0.0 => b.median / a.median,
        _ => 0.0,
    };
    let outcome = if all_decay {
        Outcome::Supported
    } else if last_ratio >= ERGODIC_FLAT {
        Outcome::Rejected
    } else {
        Outcome::Inconclusive
    };
    Verdict::new(outcome, ev)
}

fn mixing_verdict(rows: &[ExceedanceRow]) -> Verdict {
    let mut ev = Vec::new();
    let mut deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    deltas.dedup();
    let mut all_decay = true;
    let mut some_flat = false;
    for &d in &deltas {
        for fam in [LagFamily::Dyadic, LagFamily::Generic] {
            let sel: Vec<&ExceedanceRow> = rows.iter().filter(|r| r.delta == d && r.family == fam).collect();
            let (Some(first), Some(last)) = (sel.first(), sel.last()) else { continue };
            let decays = last.hi < first.lo && last.p <= 0.5 * first.p;
            let flat = last.hi >= first.lo && last.p >= 0.5 * first.p && first.lo > 0.0;
            all_decay &= decays;
            some_flat |= flat;
            ev.push(format!(
                "delta {d} {fam:?}: P[Y({}) > d] = {:.4} [{:.4}, {:.4}] vs P[Y({}) > d] = {:.4} [{:.4}, {:.4}]{}",
                first.lag,
                first.p,
                first.lo,
                first.hi,
                last.lag,
                last.p,
                last.lo,
                last.hi,
                if decays {
                    " decays"
                } else if flat {
                    " flat"
                } else {
                    ""
                }
            ));
        }
    }
    let outcome = if some_flat {
        Outcome::Rejected
    } else if all_decay && !ev.is_empty() {
        Outcome::Supported
    } else {
        Outcome::Inconclusive
    };
    Verdict::new(outcome, ev)
}

fn m3_verdict(t: &ClassificationTally, proxy: &ProxyResult, mixing: Outcome) -> Verdict {
    let diss = t.decay.fraction(Label::Dissipative);
    let cons = t.decay.fraction(Label::Conservative);
    let ev = vec![
        format!(
            "decay test: {:.1}% dissipative, {:.1}% conservative over {} paths",
            100.0 * diss,
            100.0 * cons,
            t.decay.total()
        ),
        format!("local-boundedness proxy divergent: {}", proxy.divergent),
    ];
    let outcome = if mixing == Outcome::Rejected || cons > M3_CONSERVATIVE {
        Outcome::Rejected
    } else if diss >= M3_DISSIPATIVE && !proxy.divergent {
        Outcome::Supported
    } else {
        Outcome::Inconclusive
    };
    Verdict::new(outcome, ev)
}

/// Tri-state verdicts with the hierarchy m3 ⇒ mixing ⇒ ergodic enforced.
pub fn verdict(e: &Evidence) -> Verdicts {
    let mut ergodic = ergodic_verdict(e.cesaro);
    let mut mixing = mixing_verdict(e.exceedance);
    match (ergodic.outcome, mixing.outcome) {
        (Outcome::Rejected, _) => {
            mixing.outcome = Outcome::Rejected;
            mixing.evidence.push("not ergodic, hence not mixing".into());
        }
        (Outcome::Inconclusive, Outcome::Supported) => {
            mixing.outcome = Outcome::Inconclusive;
            mixing.evidence.push("ergodicity unconfirmed".into());
        }
        _ => {}
    }
    let mut m3 = m3_verdict(e.classification, e.proxy, mixing.outcome);
    if m3.outcome == Outcome::Supported && mixing.outcome != Outcome::Supported {
        m3.outcome = Outcome::Inconclusive;
        m3.evidence.push("mixing unconfirmed".into());
    }
    let dual = e.classification.dual_fraction();
    let conflict = if e.proxy.divergent || dual >= DUAL_CONFLICT {
        Some(format!(
            "conflicting evidence: local-boundedness proxy divergent = {}, integral/decay dual labels on {:.1}% of paths",
            e.proxy.divergent,
            100.0 * dual
        ))
    } else {
        None
    };
    if let Some(c) = &conflict {
        for v in [&mut ergodic, &mut mixing, &mut m3] {
            v.outcome = Outcome::Inconclusive;
            v.evidence.push(c.clone());
        }
    }
    let _ = &mut ergodic;
    Verdicts { ergodic, mixing, m3, conflict }
}

/// All estimators for one model, and the verdicts.
pub fn diagnose(
    model: &SpectralModel,
    mesh: &Mesh,
    cfg: &DiagnosticConfig,
    stream: &RngStream,
) -> Result<DiagnosticReport> {
    cfg.validate()?;
    mesh.validate()?;
    let model = model.with_placement(cfg.placement_radius);
    model.validate(mesh.dim)?;
    let lags = ladder(cfg);
    check_increasing(&cfg.radii)?;
    let window_r = lags.last().copied().unwrap_or(0.0).max(*cfg.radii.last().expect("validated radii"));
    let window = Arc::new(mesh.window(window_r)?);
    let sampler = model.prepare(&window)?;
    let positions = lag_positions(&window, mesh, &lags)?;
    let batch = Batch {
        sampler: &sampler,
        origin: positions[0],
        lag_positions: positions,
        radii: &cfg.radii,
        thresholds: &cfg.thresholds,
        classify: true,
    };
    let stats = batch.run(cfg.n_paths, &stream.substream(1))?;
    let min_expectation = curve(&lags, &stats);
    let exceedance = exceedance_rows(
        &cfg.deltas,
        &[(LagFamily::Dyadic, &cfg.dyadic_lags), (LagFamily::Generic, &cfg.generic_lags)],
        &lags,
        &stats,
    );
    let cesaro = cesaro_rows(&window, &cfg.radii, &stats);
    let classification = ClassificationTally::from_labels(stats.iter().map(|s| &s.labels));

    let k = Arc::new(mesh.cube(0.0, cfg.theta_window)?);
    let sups = theta_sups_dehaan(&model, &k, cfg.theta_reps, cfg.n_atoms, &stream.substream(2))?;
    let theta = est_theta(&sups, &cfg.z_values);

    let mut identity = Vec::new();
    for (i, &lag) in cfg.identity_lags.iter().enumerate() {
        let s = stream.substream(3).substream(i as u64);
        identity.push(est_bivariate_identity(&model, mesh, lag, cfg.identity_reps, cfg.identity_atoms, &s)?);
    }
    let proxy = local_boundedness_proxy(&model, &k, cfg, &stream.substream(4))?;
    let verdicts =
        verdict(&Evidence { cesaro: &cesaro, exceedance: &exceedance, classification: &classification, proxy: &proxy });
    let bounded = model.is_bounded();
    Ok(DiagnosticReport {
        schema_version: SCHEMA_VERSION,
        model,
        mesh: *mesh,
        config: cfg.clone(),
        provenance: Provenance {
            seed: stream.seed,
            stream_id: stream.stream_id,
            n_paths: cfg.n_paths,
            theta_reps: cfg.theta_reps,
            identity_reps: cfg.identity_reps,
            exact_fields: bounded,
            n_atoms: (!bounded).then_some(cfg.n_atoms),
            window_radius: window_r,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        min_expectation,
        exceedance,
        cesaro,
        theta,
        identity,
        classification,
        proxy,
        verdicts,
    })
}

fn check_increasing(radii: &[f64]) -> Result<()> {
    if radii.len() < 4 || radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
        return Err(invalid("radii must hold at least 4 increasing positive values"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;

    fn row(delta: f64, family: LagFamily, lag: f64, count: usize, n: usize) -> ExceedanceRow {
        let (lo, hi) = wilson(count, n, WILSON_Z);
        ExceedanceRow { delta, family, lag, count, n, p: count as f64 / n as f64, lo, hi }
    }

    fn cesaro(medians: &[f64]) -> Vec<CesaroRow> {
        medians
            .iter()
            .enumerate()
            .map(|(i, m)| CesaroRow {
                radius: 8.0 * 2f64.powi(i as i32),
                c_hat: 0.0,
                c_se: 0.0,
                median: *m,
                decile_lo: 0.0,
                decile_hi: 0.0,
            })
            .collect()
    }

    fn proxy(divergent: bool) -> ProxyResult {
        ProxyResult {
            kind: ProxyKind::DeHaanTheta,
            z: 1.0,
            padding: None,
            theta_base: 1.0,
            theta_wide: None,
            ratio: None,
            divergent,
        }
    }

    fn tally(diss: usize, cons: usize, dual: usize) -> ClassificationTally {
        let mut t = ClassificationTally { n_paths: diss + cons, ..Default::default() };
        t.decay.dissipative = diss;
        t.decay.conservative = cons;
        t.integral.dissipative = diss + cons;
        t.dual_conflicts = dual;
        t
    }

    #[test]
    fn theta_of_constant_sups() {
        let rows = est_theta(&[0.5, 2.0, 3.0, 4.0], &[1.0, 0.1]);
        assert!((rows[0].theta - 4f64.ln()).abs() < 1e-15);
        assert!(!rows[1].usable);
    }

    #[test]
    fn verdict_rules() {
        let decaying = [row(0.1, LagFamily::Dyadic, 1.0, 300, 1000), row(0.1, LagFamily::Dyadic, 256.0, 0, 1000)];
        let flat = [row(0.1, LagFamily::Dyadic, 1.0, 600, 1000), row(0.1, LagFamily::Dyadic, 256.0, 610, 1000)];
        let c_dec = cesaro(&[0.5, 0.25, 0.125, 0.06]);
        let c_flat = cesaro(&[1.0, 1.0, 1.0, 1.0]);
        let t_ok = tally(1000, 0, 0);
        let p = proxy(false);
        let v = verdict(&Evidence { cesaro: &c_dec, exceedance: &decaying, classification: &t_ok, proxy: &p });
        assert_eq!(
            (v.ergodic.outcome, v.mixing.outcome, v.m3.outcome),
            (Outcome::Supported, Outcome::Supported, Outcome::Supported)
        );
        let t_cons = tally(0, 1000, 0);
        let v = verdict(&Evidence { cesaro: &c_flat, exceedance: &flat, classification: &t_cons, proxy: &p });
        assert_eq!(
            (v.ergodic.outcome, v.mixing.outcome, v.m3.outcome),
            (Outcome::Rejected, Outcome::Rejected, Outcome::Rejected)
        );
        let v = verdict(&Evidence { cesaro: &c_dec, exceedance: &flat, classification: &t_cons, proxy: &p });
        assert_eq!(
            (v.ergodic.outcome, v.mixing.outcome, v.m3.outcome),
            (Outcome::Supported, Outcome::Rejected, Outcome::Rejected)
        );
        // Hierarchy: mixing evidence without ergodicity is not enough.
        let v = verdict(&Evidence { cesaro: &c_flat, exceedance: &decaying, classification: &t_ok, proxy: &p });
        assert_eq!(v.mixing.outcome, Outcome::Rejected);
        assert_ne!(v.m3.outcome, Outcome::Supported);
        let t_dual = tally(500, 500, 500);
        let v = verdict(&Evidence { cesaro: &c_dec, exceedance: &decaying, classification: &t_dual, proxy: &p });
        assert!(v.conflict.is_some());
        assert_eq!(
            (v.ergodic.outcome, v.mixing.outcome, v.m3.outcome),
            (Outcome::Inconclusive, Outcome::Inconclusive, Outcome::Inconclusive)
        );
    }

    #[test]
    fn min_expectation_of_bump_at_disjoint_lag() {
        let mesh = Mesh::new(1, Domain::Continuous, 0.125).unwrap();
        let m = SpectralModel::bump(Shape::triangle());
        let c = est_min_expectation(&m, &mesh, &[0.0, 3.0], 200, &RngStream::new(1, 1)).unwrap();
        assert_eq!(c[1].mean, 0.0);
        assert!(est_min_expectation(&m, &mesh, &[0.0], 50, &RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn identity_of_constant_is_exact() {
        // min(c, c) = c and P[η ≤ 1] = exp(-c): both sides equal c.
        let mesh = Mesh::new(1, Domain::Lattice, 1.0).unwrap();
        let e =
            est_bivariate_identity(&SpectralModel::constant(0.5), &mesh, 1.0, 4000, 10, &RngStream::new(1, 1)).unwrap();
        assert_eq!((e.lhs, e.lhs_se), (0.5, 0.0));
        assert!(e.gap.abs() < 3.0 * e.pooled_se, "{e:?}");
    }
}
