//! Max-stable fields on finite grids, from spectral atoms (de Haan form) or
//! from translated shapes (mixed moving maxima).

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Shape, ShapeProfile, SpectralFunction, SpectralModel, SpectralPath, SpectralSampler};
use crate::cones::AtomLabels;
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Index};
use crate::rng::{PoissonArrivals, RngStream};

pub const DEFAULT_FIXED_ATOMS: usize = 500;
pub const DEFAULT_LOG_CAP: usize = 10_000;
pub const DEFAULT_MAX_ATOMS: usize = 10_000_000;

const ARRIVALS: u64 = 0x6172_7269_7661_6c73;
const ATOMS: u64 = 0x6174_6f6d_7300_0000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopRule {
    /// The first `n_atoms` atoms; approximate.
    FixedN { n_atoms: usize },
    /// Draw while `U_next · τ > min_x η(x)`; exact for bounded models. `τ`
    /// defaults to the model's own bound.
    Threshold {
        #[serde(default)]
        sup_bound: Option<f64>,
    },
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::Threshold { sup_bound: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub stop: StopRule,
    /// Atoms retained in the field's log.
    pub log_cap: usize,
    /// Safety net for threshold runs.
    pub max_atoms: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { stop: StopRule::default(), log_cap: DEFAULT_LOG_CAP, max_atoms: DEFAULT_MAX_ATOMS }
    }
}

impl SimConfig {
    pub fn fixed(n_atoms: usize) -> Self {
        Self { stop: StopRule::FixedN { n_atoms }, ..Self::default() }
    }

    pub fn threshold() -> Self {
        Self::default()
    }

    /// Fixed count for unbounded models, threshold stopping otherwise.
    pub fn for_model(model: &SpectralModel, n_atoms: usize) -> Self {
        if model.is_bounded() {
            Self::threshold()
        } else {
            Self::fixed(n_atoms)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub u: f64,
    pub function: SpectralFunction,
    /// Translation `X_i` of mixed-moving-maximum atoms.
    pub origin: Option<Index>,
    pub labels: Option<AtomLabels>,
}

impl Atom {
    pub fn path(&self, grid: &Arc<Grid>) -> Result<SpectralPath> {
        self.function.path(grid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    FixedN,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationInfo {
    pub mode: TruncationMode,
    pub n_used: usize,
    /// Whether the values equal the infinite-atom field on the grid.
    pub exact: bool,
    pub sup_bound: Option<f64>,
    /// Atoms left out of the log because of the cap.
    pub atoms_dropped: usize,
    /// Padding of the mixed-moving-maximum construction.
    pub padding: Option<f64>,
}

impl TruncationInfo {
    pub fn log_overflow(&self) -> bool {
        self.atoms_dropped > 0
    }

    fn manual(n: usize) -> Self {
        Self { mode: TruncationMode::FixedN, n_used: n, exact: false, sup_bound: None, atoms_dropped: 0, padding: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxStableField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    atoms: Vec<Atom>,
    truncation: TruncationInfo,
}

impl MaxStableField {
    /// The field `max_i u_i Y_i` of explicit atoms. Atoms are sorted by
    /// decreasing level.
    pub fn from_atoms(grid: Arc<Grid>, mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.iter().any(|a| !(a.u > 0.0) || !a.u.is_finite()) {
            return Err(invalid("atom levels must be positive and finite"));
        }
        atoms.sort_by(|a, b| b.u.total_cmp(&a.u));
        let mut values = vec![0.0; grid.len()];
        for a in &atoms {
            a.function.max_into(a.u, &grid, &mut values)?;
        }
        let truncation = TruncationInfo::manual(atoms.len());
        Ok(Self { grid, values, atoms, truncation })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values, atoms: Vec::new(), truncation: TruncationInfo::manual(0) }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn truncation(&self) -> &TruncationInfo {
        &self.truncation
    }

    pub fn value_at(&self, idx: Index) -> Option<f64> {
        self.grid.position(idx).map(|p| self.values[p])
    }

    /// `max_i u_i Y_i(x)` over the logged atoms.
    pub fn recompute(&self) -> Result<Vec<f64>> {
        if self.truncation.log_overflow() {
            return Err(Error::LogOverflow(self.atoms.len()));
        }
        let mut values = vec![0.0; self.grid.len()];
        for a in &self.atoms {
            a.function.max_into(a.u, &self.grid, &mut values)?;
        }
        Ok(values)
    }

    /// Attach cone labels, one per logged atom.
    pub fn with_labels(mut self, labels: &[AtomLabels]) -> Result<Self> {
        if labels.len() != self.atoms.len() {
            return Err(Error::MissingVerdict(labels.len().min(self.atoms.len())));
        }
        for (a, l) in self.atoms.iter_mut().zip(labels) {
            a.labels = Some(*l);
        }
        Ok(self)
    }

    /// Field of a subset of this field's atoms, recomputed from the log.
    pub(crate) fn subset(&self, keep: &[usize]) -> Result<Self> {
        let atoms: Vec<Atom> = keep.iter().map(|&i| self.atoms[i].clone()).collect();
        let mut values = vec![0.0; self.grid.len()];
        for a in &atoms {
            a.function.max_into(a.u, &self.grid, &mut values)?;
        }
        let truncation = TruncationInfo { n_used: atoms.len(), atoms_dropped: 0, ..self.truncation };
        Ok(Self { grid: self.grid.clone(), values, atoms, truncation })
    }
}

fn check_same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch("fields live on different grids".into()));
    }
    Ok(())
}

/// Pointwise maximum; atom logs are merged in decreasing level order.
pub fn pointwise_max(f1: &MaxStableField, f2: &MaxStableField) -> Result<MaxStableField> {
    check_same_grid(&f1.grid, &f2.grid)?;
    let values = f1.values.iter().zip(&f2.values).map(|(a, b)| a.max(*b)).collect();
    let mut atoms = Vec::with_capacity(f1.atoms.len() + f2.atoms.len());
    atoms.extend(f1.atoms.iter().cloned());
    atoms.extend(f2.atoms.iter().cloned());
    atoms.sort_by(|a, b| b.u.total_cmp(&a.u));
    let (t1, t2) = (f1.truncation, f2.truncation);
    let truncation = TruncationInfo {
        mode: if t1.mode == t2.mode { t1.mode } else { TruncationMode::FixedN },
        n_used: t1.n_used + t2.n_used,
        exact: t1.exact && t2.exact,
        sup_bound: if t1.sup_bound == t2.sup_bound { t1.sup_bound } else { None },
        atoms_dropped: t1.atoms_dropped + t2.atoms_dropped,
        padding: if t1.padding == t2.padding { t1.padding } else { None },
    };
    Ok(MaxStableField { grid: f1.grid.clone(), values, atoms, truncation })
}

/// `s · f`. With a complete log the values are recomputed from the rescaled
/// atoms, so the field stays exactly recomputable.
pub fn rescale(f: &MaxStableField, s: f64) -> Result<MaxStableField> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("rescale factor must be positive, got {s}")));
    }
    if s == 1.0 {
        return Ok(f.clone());
    }
    let atoms: Vec<Atom> = f.atoms.iter().map(|a| Atom { u: a.u * s, ..a.clone() }).collect();
    let mut out = MaxStableField { grid: f.grid.clone(), values: Vec::new(), atoms, truncation: f.truncation };
    out.values = if f.truncation.log_overflow() { f.values.iter().map(|v| v * s).collect() } else { out.recompute()? };
    Ok(out)
}

/// Level and atom streams of one field: `(arrivals, per-atom parent)`.
pub(crate) fn field_streams(stream: &RngStream) -> (RngStream, RngStream) {
    (stream.substream(ARRIVALS), stream.substream(ATOMS))
}

struct Run<'a> {
    grid: &'a Arc<Grid>,
    cfg: &'a SimConfig,
    tau: Option<f64>,
    level_scale: f64,
    padding: Option<f64>,
}

impl Run<'_> {
    fn go(
        &self,
        stream: &RngStream,
        draw: impl Fn(&RngStream) -> SpectralFunction,
        fold: impl Fn(&SpectralFunction, f64, &mut [f64]) -> Result<usize>,
        origin_of: impl Fn(&SpectralFunction) -> Option<Index>,
    ) -> Result<MaxStableField> {
        let n = self.grid.len();
        let (arrival_stream, atom_stream) = field_streams(stream);
        let mut arrivals = PoissonArrivals::new(arrival_stream.rng());
        let mut values = vec![0.0; n];
        let mut zeros = n;
        let mut min_val = 0.0;
        let mut atoms = Vec::new();
        let mut dropped = 0;
        let mut used = 0;
        let limit = match self.cfg.stop {
            StopRule::FixedN { n_atoms } => n_atoms,
            StopRule::Threshold { .. } => usize::MAX,
        };
        while used < limit {
            let u = self.level_scale * arrivals.next().expect("arrivals never end");
            if let Some(tau) = self.tau {
                if zeros == 0 {
                    min_val = values.iter().copied().fold(f64::INFINITY, f64::min);
                }
                if u * tau <= min_val {
                    break;
                }
                if used >= self.cfg.max_atoms {
                    return Err(Error::Runaway(used));
                }
            }
            let f = draw(&atom_stream.substream(used as u64));
            zeros -= fold(&f, u, &mut values)?;
            if atoms.len() < self.cfg.log_cap {
                let origin = origin_of(&f);
                atoms.push(Atom { u, function: f, origin, labels: None });
            } else {
                dropped += 1;
            }
            used += 1;
        }
        let truncation = TruncationInfo {
            mode: if self.tau.is_some() { TruncationMode::Threshold } else { TruncationMode::FixedN },
            n_used: used,
            exact: self.tau.is_some(),
            sup_bound: self.tau,
            atoms_dropped: dropped,
            padding: self.padding,
        };
        Ok(MaxStableField { grid: self.grid.clone(), values, atoms, truncation })
    }
}

pub(crate) fn threshold_tau(stop: &StopRule, bound: Option<f64>) -> Result<Option<f64>> {
    match *stop {
        StopRule::FixedN { n_atoms } => {
            if n_atoms == 0 {
                return Err(invalid("n_atoms must be at least 1"));
            }
            Ok(None)
        }
        StopRule::Threshold { sup_bound } => {
            let Some(bound) = bound else {
                return Err(Error::Unsupported(
                    "threshold stopping needs a bounded spectral model; use fixed_n".into(),
                ));
            };
            match sup_bound {
                None => Ok(Some(bound)),
                Some(t) if t >= bound * (1.0 - 1e-12) && t.is_finite() => Ok(Some(t)),
                Some(t) => Err(invalid(format!("sup_bound {t} is below the model's bound {bound}"))),
            }
        }
    }
}

/// One de Haan field `max_i U_i Y_i` on the sampler's grid.
pub fn simulate_with(sampler: &SpectralSampler, stream: &RngStream, cfg: &SimConfig) -> Result<MaxStableField> {
    let tau = threshold_tau(&cfg.stop, sampler.sup_bound())?;
    let run = Run { grid: sampler.grid(), cfg, tau, level_scale: 1.0, padding: None };
    run.go(stream, |s| sampler.draw(s), |f, u, v| sampler.fold(f, u, v), |_| None)
}

pub fn simulate_dehaan(
    model: &SpectralModel,
    grid: &Arc<Grid>,
    stream: &RngStream,
    cfg: &SimConfig,
) -> Result<MaxStableField> {
    simulate_with(&model.prepare(grid)?, stream, cfg)
}

/// Finite law of normalized shapes, e.g. extracted from simulated fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalShapeLaw {
    pub profiles: Vec<Arc<ShapeProfile>>,
    /// Multiplicities; draws are proportional to them.
    pub counts: Vec<u64>,
}

impl EmpiricalShapeLaw {
    /// Pools profiles, merging exact duplicates.
    pub fn from_profiles<'a>(profiles: impl IntoIterator<Item = &'a Arc<ShapeProfile>>) -> Result<Self> {
        let mut index: HashMap<(Vec<Index>, Vec<u64>), usize> = HashMap::new();
        let mut out = Self { profiles: Vec::new(), counts: Vec::new() };
        for p in profiles {
            let key = (p.offsets.clone(), p.values.iter().map(|v| v.to_bits()).collect());
            match index.get(&key) {
                Some(&i) => out.counts[i] += 1,
                None => {
                    index.insert(key, out.profiles.len());
                    out.profiles.push(p.clone());
                    out.counts.push(1);
                }
            }
        }
        if out.profiles.is_empty() {
            return Err(invalid("empirical shape law needs at least one profile"));
        }
        Ok(out)
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &Arc<ShapeProfile> {
        let total: u64 = self.counts.iter().sum();
        let mut k = rng.random_range(0..total);
        for (p, c) in self.profiles.iter().zip(&self.counts) {
            if k < *c {
                return p;
            }
            k -= c;
        }
        unreachable!("k < total")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum M3ShapeLaw {
    Fixed { shape: Shape },
    Empirical { law: EmpiricalShapeLaw },
}

impl M3ShapeLaw {
    pub fn support_radius(&self) -> f64 {
        match self {
            M3ShapeLaw::Fixed { shape } => shape.support_radius(),
            M3ShapeLaw::Empirical { law } => law.profiles.iter().map(|p| p.radius()).fold(0.0, f64::max),
        }
    }

    fn sup(&self) -> f64 {
        match self {
            M3ShapeLaw::Fixed { shape } => shape.sup(),
            M3ShapeLaw::Empirical { law } => law.profiles.iter().map(|p| p.max()).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct M3Config {
    /// Defaults to the shape's support radius.
    pub padding: Option<f64>,
    pub stop: StopRule,
    pub log_cap: usize,
    pub max_atoms: usize,
}

impl Default for M3Config {
    fn default() -> Self {
        Self { padding: None, stop: StopRule::default(), log_cap: DEFAULT_LOG_CAP, max_atoms: DEFAULT_MAX_ATOMS }
    }
}

/// Comb shape whose support fits in `padding`.
pub fn m3_comb(padding: f64) -> Result<Shape> {
    let n = padding.floor() as i64 - 1;
    if n < 1 {
        return Err(invalid(format!("padding {padding} leaves no room for a comb bump")));
    }
    Ok(Shape::Comb { bumps: n as usize })
}

/// Mixed moving maximum `max_i V_i Z_i(x - X_i)` on `grid`: positions uniform
/// over the mesh points of the grid's bounding box grown by `padding`, levels
/// `V_i = A/Γ_i` with `A` the padded volume.
pub fn simulate_m3(law: &M3ShapeLaw, grid: &Arc<Grid>, stream: &RngStream, cfg: &M3Config) -> Result<MaxStableField> {
    let h = grid.spacing();
    let dim = grid.dim();
    if let M3ShapeLaw::Fixed { shape } = law {
        shape.validate(dim)?;
    }
    if let M3ShapeLaw::Empirical { law } = law {
        if law.profiles.iter().any(|p| p.dim != dim || p.spacing != h) {
            return Err(Error::GridMismatch("profiles were extracted on a different mesh".into()));
        }
    }
    let support = law.support_radius();
    let padding = cfg.padding.unwrap_or(support);
    if !(padding >= support * (1.0 - 1e-12)) || !padding.is_finite() {
        return Err(invalid(format!("padding {padding} is smaller than the support radius {support}")));
    }
    let pad = (padding / h + 1e-9).ceil() as i64;
    let (mut lo, mut hi) = grid.bounding_box();
    let mut count = 1.0;
    for k in 0..dim {
        lo[k] -= pad;
        hi[k] += pad;
        count *= (hi[k] - lo[k] + 1) as f64;
    }
    let area = count * grid.cell_measure();
    let tau = threshold_tau(&cfg.stop, Some(law.sup()))?;
    let sim_cfg = SimConfig { stop: cfg.stop, log_cap: cfg.log_cap, max_atoms: cfg.max_atoms };
    let run = Run { grid, cfg: &sim_cfg, tau, level_scale: area, padding: Some(padding) };
    let draw = |s: &RngStream| {
        let mut rng = s.rng();
        let mut origin = [0i64; 2];
        for k in 0..dim {
            origin[k] = rng.random_range(lo[k]..=hi[k]);
        }
        match law {
            M3ShapeLaw::Fixed { shape } => {
                SpectralFunction::Shifted { shape: shape.clone(), origin, spacing: h, weight: 1.0 }
            }
            M3ShapeLaw::Empirical { law } => {
                SpectralFunction::Profile { profile: law.pick(&mut rng).clone(), origin, weight: 1.0 }
            }
        }
    };
    run.go(stream, draw, |f, u, v| f.max_into(u, grid, v), |f| f.origin())
}

/// `n` replications; replication `r` sees `stream.substream(r)`. Output order is
/// the replication order whatever the thread count.
pub fn replicate<T: Send>(
    n: usize,
    stream: &RngStream,
    f: impl Fn(usize, RngStream) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(|r| f(r, stream.substream(r as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::GaussianMethod;

    fn line(h: f64, r: f64) -> Arc<Grid> {
        Arc::new(Grid::continuous(1, h, r).unwrap())
    }

    #[test]
    fn constant_field_is_first_level() {
        let g = Arc::new(Grid::lattice(1, 5.0).unwrap());
        for cfg in [SimConfig::threshold(), SimConfig::fixed(7)] {
            let f = simulate_dehaan(&SpectralModel::constant(1.0), &g, &RngStream::new(3, 1), &cfg).unwrap();
            let u1 = f.atoms()[0].u;
            assert!(f.values().iter().all(|v| *v == u1));
        }
    }

    #[test]
    fn single_fixed_atom() {
        let g = line(0.25, 3.0);
        let m = SpectralModel::brown_resnick();
        let f = simulate_dehaan(&m, &g, &RngStream::new(9, 0), &SimConfig::fixed(1)).unwrap();
        assert_eq!(f.atoms().len(), 1);
        let a = &f.atoms()[0];
        let p = a.path(&g).unwrap();
        for (v, y) in f.values().iter().zip(p.values()) {
            assert_eq!(*v, a.u * y);
        }
        assert!(!f.truncation().exact);
    }

    #[test]
    fn threshold_rejects_unbounded_and_low_tau() {
        let g = line(0.25, 3.0);
        let br = SpectralModel::BrownResnick { terms: 10, sampler: GaussianMethod::Series };
        assert!(matches!(
            simulate_dehaan(&br, &g, &RngStream::new(1, 1), &SimConfig::threshold()),
            Err(Error::Unsupported(_))
        ));
        let cfg = SimConfig { stop: StopRule::Threshold { sup_bound: Some(0.5) }, ..SimConfig::default() };
        assert!(simulate_dehaan(&SpectralModel::constant(1.0), &g, &RngStream::new(1, 1), &cfg).is_err());
    }

    #[test]
    fn recompute_and_extra_atoms() {
        let g = line(0.125, 2.0);
        let m = SpectralModel::bump(Shape::triangle());
        let sampler = m.prepare(&g).unwrap();
        for seed in 0..20 {
            let st = RngStream::new(seed, 4);
            let f = simulate_with(&sampler, &st, &SimConfig::threshold()).unwrap();
            assert!(f.truncation().exact);
            assert_eq!(f.recompute().unwrap(), f.values());
            assert!(f.values().iter().all(|v| *v > 0.0));
            // 100 atoms past the stopping point change nothing.
            let n = f.truncation().n_used;
            let more = simulate_with(&sampler, &st, &SimConfig::fixed(n + 100)).unwrap();
            assert_eq!(more.values(), f.values());
        }
    }

    #[test]
    fn injected_m3_atom_is_translated_triangle() {
        let g = line(0.125, 6.0);
        let a = Atom {
            u: 2.0,
            function: SpectralFunction::Shifted {
                shape: Shape::triangle(),
                origin: [24, 0],
                spacing: 0.125,
                weight: 1.0,
            },
            origin: Some([24, 0]),
            labels: None,
        };
        let f = MaxStableField::from_atoms(g.clone(), vec![a]).unwrap();
        for p in 0..g.len() {
            let x = g.coord(p)[0];
            assert!((f.values()[p] - 2.0 * (1.0 - (x - 3.0).abs()).max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn m3_padding_and_recompute() {
        let g = line(0.125, 2.0);
        let law = M3ShapeLaw::Fixed { shape: Shape::triangle() };
        let bad = M3Config { padding: Some(0.5), ..M3Config::default() };
        assert!(simulate_m3(&law, &g, &RngStream::new(1, 1), &bad).is_err());
        let f = simulate_m3(&law, &g, &RngStream::new(1, 1), &M3Config::default()).unwrap();
        assert_eq!(f.recompute().unwrap(), f.values());
        assert!(f.atoms().iter().all(|a| a.origin.is_some()));
        assert!(f.atoms().windows(2).all(|w| w[0].u > w[1].u));
    }

    #[test]
    fn max_and_rescale_identities() {
        let g = line(0.125, 2.0);
        let m = SpectralModel::bump(Shape::triangle());
        let f = simulate_dehaan(&m, &g, &RngStream::new(5, 5), &SimConfig::threshold()).unwrap();
        let ff = pointwise_max(&f, &f).unwrap();
        assert_eq!(ff.values(), f.values());
        assert_eq!(rescale(&f, 1.0).unwrap(), f);
        let half = rescale(&f, 0.5).unwrap();
        assert_eq!(half.recompute().unwrap(), half.values());
        let other = line(0.125, 3.0);
        assert!(pointwise_max(&f, &MaxStableField::zeros(other)).is_err());
    }

    #[test]
    fn log_cap_flags_overflow() {
        let g = line(0.125, 1.0);
        let cfg = SimConfig { stop: StopRule::FixedN { n_atoms: 50 }, log_cap: 10, ..SimConfig::default() };
        let f = simulate_dehaan(&SpectralModel::bump(Shape::triangle()), &g, &RngStream::new(2, 2), &cfg).unwrap();
        assert_eq!(f.atoms().len(), 10);
        assert_eq!(f.truncation().atoms_dropped, 40);
        assert!(matches!(f.recompute(), Err(Error::LogOverflow(_))));
    }
}
