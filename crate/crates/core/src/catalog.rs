//! Spectral models: generators of the non-negative paths `Y` whose Poisson
//! maxima build a max-stable field.
//!
//! Models are plain serializable descriptors ([`SpectralModel`]). To draw from
//! one, [`SpectralModel::prepare`] binds it to a grid and yields a
//! [`SpectralSampler`]; each draw is a realized [`SpectralFunction`] that can be
//! evaluated on the grid it was drawn for and, for every variant except the
//! Cholesky-sampled Brown–Resnick paths, on any other grid of the same mesh.
//!
//! Translated shapes (compact bumps, the comb) are turned into de Haan spectral
//! functions with a random grid-aligned origin `X` drawn from a placement law
//! `q` of full support on the mesh, and weight `h^d / q(X)`. This gives
//! `E[Y(x)] = h^d Σ_j shape(x - jh)` at every mesh point, so the resulting
//! field is stationary on the mesh whatever `q` is; the placement law only
//! controls efficiency.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Domain, Grid, Index, Point};
use crate::rng::{GaussianSampler, GaussianSpec, RngStream};

pub const DEFAULT_SERIES_TERMS: usize = 40;
const MAX_SERIES_TERMS: usize = 1000;

// ---------------------------------------------------------------------------
// Shapes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `height · Π_k (1 - |x_k|/w)_+`
    Triangular { half_width: f64, height: f64 },
    /// `height · Π_k (1 - (x_k/w)²)_+`
    Parabolic { half_width: f64, height: f64 },
    /// `Σ_{n=1}^{bumps} f(n²(x - n))` with `f(t) = (1 - t²) 1{|t| ≤ 1}`; one-dimensional.
    Comb { bumps: usize },
}

fn tri1(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

fn tri_cdf(t: f64) -> f64 {
    let t = t.clamp(-1.0, 1.0);
    if t <= 0.0 {
        0.5 * (1.0 + t) * (1.0 + t)
    } else {
        1.0 - 0.5 * (1.0 - t) * (1.0 - t)
    }
}

fn para1(t: f64) -> f64 {
    (1.0 - t * t).max(0.0)
}

fn para_cdf(t: f64) -> f64 {
    let t = t.clamp(-1.0, 1.0);
    t - t * t * t / 3.0 + 2.0 / 3.0
}

fn comb_candidates(lo: f64, hi: f64, bumps: usize) -> std::ops::RangeInclusive<usize> {
    let a = (lo.floor() - 1.0).max(1.0);
    let b = (hi.ceil() + 1.0).min(bumps as f64);
    if b < a {
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    a as usize..=b as usize
}

impl Shape {
    pub fn triangle() -> Self {
        Shape::Triangular { half_width: 1.0, height: 1.0 }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            Shape::Triangular { half_width, height } | Shape::Parabolic { half_width, height } => {
                if !(half_width > 0.0 && half_width.is_finite()) {
                    return Err(invalid(format!("shape half_width must be positive, got {half_width}")));
                }
                if !(height > 0.0 && height.is_finite()) {
                    return Err(invalid("zero or non-finite shape height (zero shape rejected)"));
                }
            }
            Shape::Comb { bumps } => {
                if dim != 1 {
                    return Err(Error::Unsupported("the comb shape is one-dimensional".into()));
                }
                if bumps == 0 {
                    return Err(invalid("comb needs at least one bump (zero shape rejected)"));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: Point, dim: usize) -> f64 {
        match *self {
            Shape::Triangular { half_width, height } => {
                height * (0..dim).map(|k| tri1(x[k] / half_width)).product::<f64>()
            }
            Shape::Parabolic { half_width, height } => {
                height * (0..dim).map(|k| para1(x[k] / half_width)).product::<f64>()
            }
            Shape::Comb { bumps } => {
                let t = x[0];
                comb_candidates(t, t, bumps)
                    .map(|n| {
                        let n2 = (n * n) as f64;
                        para1(n2 * (t - n as f64))
                    })
                    .sum()
            }
        }
    }

    /// Exact integral of the shape over the cell `center ± h/2` (per axis).
    pub fn cell_integral(&self, center: Point, h: f64, dim: usize) -> f64 {
        match *self {
            Shape::Triangular { half_width: w, height } => {
                height
                    * (0..dim)
                        .map(|k| w * (tri_cdf((center[k] + 0.5 * h) / w) - tri_cdf((center[k] - 0.5 * h) / w)))
                        .product::<f64>()
            }
            Shape::Parabolic { half_width: w, height } => {
                height
                    * (0..dim)
                        .map(|k| w * (para_cdf((center[k] + 0.5 * h) / w) - para_cdf((center[k] - 0.5 * h) / w)))
                        .product::<f64>()
            }
            Shape::Comb { bumps } => {
                let a = center[0] - 0.5 * h;
                let b = center[0] + 0.5 * h;
                comb_candidates(a, b, bumps)
                    .map(|n| {
                        let n2 = (n * n) as f64;
                        let c = n as f64;
                        (para_cdf(n2 * (b - c)) - para_cdf(n2 * (a - c))) / n2
                    })
                    .sum()
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Shape::Triangular { height, .. } | Shape::Parabolic { height, .. } => height,
            // Bumps 1 and 2 overlap on (1.75, 2); their sum peaks at 306/289.
            Shape::Comb { bumps } => {
                if bumps >= 2 {
                    306.0 / 289.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Per-axis support `[lo, hi]`.
    pub fn reach(&self) -> (f64, f64) {
        match *self {
            Shape::Triangular { half_width, .. } | Shape::Parabolic { half_width, .. } => (-half_width, half_width),
            Shape::Comb { bumps } => (0.0, bumps as f64 + 1.0),
        }
    }

    pub fn support_radius(&self) -> f64 {
        let (lo, hi) = self.reach();
        lo.abs().max(hi.abs())
    }

    /// `∫ shape dλ` over `ℝ^d`.
    pub fn integral(&self, dim: usize) -> f64 {
        match *self {
            Shape::Triangular { half_width, height } => height * half_width.powi(dim as i32),
            Shape::Parabolic { half_width, height } => height * (4.0 * half_width / 3.0).powi(dim as i32),
            Shape::Comb { bumps } => (1..=bumps).map(|n| 4.0 / (3.0 * (n * n) as f64)).sum(),
        }
    }

    /// `h^d Σ_j shape(jh)`: the mean of a translated-shape spectral function at
    /// any mesh point.
    pub fn mesh_mass(&self, h: f64, dim: usize) -> f64 {
        let (lo, hi) = self.reach();
        let a = (lo / h).floor() as i64;
        let b = (hi / h).ceil() as i64;
        let mut total = 0.0;
        if dim == 1 {
            for i in a..=b {
                total += self.eval([i as f64 * h, 0.0], 1);
            }
        } else {
            for i in a..=b {
                for j in a..=b {
                    total += self.eval([i as f64 * h, j as f64 * h], 2);
                }
            }
        }
        total * h.powi(dim as i32)
    }

    fn index_reach(&self, h: f64) -> (i64, i64) {
        let (lo, hi) = self.reach();
        ((lo / h).floor() as i64, (hi / h).ceil() as i64)
    }
}

// ---------------------------------------------------------------------------
// Paths

/// Non-negative values of a spectral function on a grid, together with the
/// per-point quadrature masses used for all integrals.
///
/// For translated analytic shapes on continuous meshes the mass of a point is
/// the exact integral of the function over its cell, so narrow features such
/// as the comb's bumps are integrated correctly; otherwise it is
/// `value · h^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPath {
    grid: Arc<Grid>,
    values: Vec<f64>,
    masses: Vec<f64>,
}

impl SpectralPath {
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        let cell = grid.cell_measure();
        let masses = values.iter().map(|v| v * cell).collect();
        Self::with_masses(grid, values, masses)
    }

    pub fn with_masses(grid: Arc<Grid>, values: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || masses.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values / {} masses for a grid of {} points",
                values.len(),
                masses.len(),
                grid.len()
            )));
        }
        if values.iter().chain(&masses).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("spectral path values must be finite and non-negative"));
        }
        Ok(Self { grid, values, masses })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn window_radius(&self) -> f64 {
        self.grid.radius()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn integral(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn scaled(&self, u: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * u).collect(),
            masses: self.masses.iter().map(|v| v * u).collect(),
        }
    }

    /// The path `x ↦ f(x + offset·h)` on the same grid; points whose source
    /// falls outside the grid read zero.
    pub fn shifted(&self, offset: Index) -> Self {
        let mut values = vec![0.0; self.grid.len()];
        let mut masses = vec![0.0; self.grid.len()];
        for (p, idx) in self.grid.indices().iter().enumerate() {
            if let Some(q) = self.grid.position([idx[0] + offset[0], idx[1] + offset[1]]) {
                values[p] = self.values[q];
                masses[p] = self.masses[q];
            }
        }
        Self { grid: self.grid.clone(), values, masses }
    }

    /// Pointwise product with a positive weight.
    pub fn weighted(&self, w: impl Fn(Point) -> f64) -> Self {
        let mut values = self.values.clone();
        let mut masses = self.masses.clone();
        for p in 0..self.grid.len() {
            let wp = w(self.grid.coord(p));
            values[p] *= wp;
            masses[p] *= wp;
        }
        Self { grid: self.grid.clone(), values, masses }
    }
}

// ---------------------------------------------------------------------------
// The dyadic cosine variogram and Brown–Resnick paths

fn half_angle(t: f64, k: usize) -> f64 {
    // t / 2^k is an exact power-of-two scaling, so dyadic rescalings of t
    // reproduce the same angles bit for bit.
    0.5 * TAU * (t * 0.5f64.powi(k as i32))
}

/// `Σ_{k=1}^{K} (1 - cos(2πt/2^k))`.
pub fn sigma2_series(t: f64, terms: usize) -> f64 {
    (1..=terms)
        .map(|k| {
            let s = half_angle(t, k).sin();
            2.0 * s * s
        })
        .sum::<f64>()
}

/// Quadratic bound `Σ_{k>K} ½(2πt/2^k)²` on the neglected tail.
pub fn sigma2_tail_bound(t: f64, terms: usize) -> f64 {
    0.5 * (TAU * t).powi(2) * 0.25f64.powi(terms as i32) / 3.0
}

/// `(1 - cos θ_k, sin θ_k)` for `θ_k = 2πt/2^k`, via half angles.
fn trig_terms(t: f64, k: usize) -> [f64; 2] {
    let (s, co) = half_angle(t, k).sin_cos();
    [2.0 * s * s, 2.0 * s * co]
}

fn br_log_value(coefficients: &[[f64; 2]], t: f64) -> f64 {
    let mut z = 0.0;
    let mut s2 = 0.0;
    for (k, c) in coefficients.iter().enumerate() {
        let [a, b] = trig_terms(t, k + 1);
        z += c[0] * a + c[1] * b;
        s2 += a;
    }
    FRAC_1_SQRT_2 * z - 0.5 * s2
}

/// Trig factors of every grid point, so that repeated draws on one grid skip
/// the `sin_cos` calls. Evaluation order matches [`br_log_value`] exactly.
#[derive(Debug)]
struct TrigTable {
    terms: usize,
    ab: Vec<[f64; 2]>,
    s2: Vec<f64>,
}

const TRIG_TABLE_CAP: usize = 1 << 22;

impl TrigTable {
    fn new(grid: &Grid, terms: usize) -> Option<Self> {
        if grid.len() * terms > TRIG_TABLE_CAP {
            return None;
        }
        let mut ab = Vec::with_capacity(grid.len() * terms);
        let mut s2 = Vec::with_capacity(grid.len());
        for p in 0..grid.len() {
            let t = grid.coord(p)[0];
            let mut acc = 0.0;
            for k in 1..=terms {
                let f = trig_terms(t, k);
                acc += f[0];
                ab.push(f);
            }
            s2.push(acc);
        }
        Some(Self { terms, ab, s2 })
    }

    fn log_value(&self, p: usize, coefficients: &[[f64; 2]]) -> f64 {
        let row = &self.ab[p * self.terms..(p + 1) * self.terms];
        let mut z = 0.0;
        for (c, f) in coefficients.iter().zip(row) {
            z += c[0] * f[0] + c[1] * f[1];
        }
        FRAC_1_SQRT_2 * z - 0.5 * self.s2[p]
    }
}

fn br_z_value(coefficients: &[[f64; 2]], t: f64) -> f64 {
    let mut z = 0.0;
    for (k, c) in coefficients.iter().enumerate() {
        let [a, b] = trig_terms(t, k + 1);
        z += c[0] * a + c[1] * b;
    }
    FRAC_1_SQRT_2 * z
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianMethod {
    #[default]
    Series,
    Cholesky,
}

fn check_br(grid: &Grid, terms: usize) -> Result<()> {
    if grid.dim() != 1 {
        return Err(Error::Unsupported("Brown–Resnick paths are one-dimensional".into()));
    }
    if terms == 0 || terms > MAX_SERIES_TERMS {
        return Err(invalid(format!("series terms must be in 1..={MAX_SERIES_TERMS}, got {terms}")));
    }
    Ok(())
}

fn br_gaussian(grid: &Grid, terms: usize) -> Result<GaussianSampler> {
    let spec = GaussianSpec::new(move |t| sigma2_series(t, terms), 0.0);
    let pts: Vec<f64> = (0..grid.len()).map(|i| grid.coord(i)[0]).collect();
    GaussianSampler::new(&spec, &pts)
}

fn draw_series<R: Rng + ?Sized>(rng: &mut R, terms: usize) -> Vec<[f64; 2]> {
    (0..terms).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect()
}

/// One draw of the Gaussian process `Z` (stationary increments, `Z(0) = 0`,
/// variogram `sigma2_series(·, terms)`) on a one-dimensional grid.
pub fn brown_resnick_z(grid: &Grid, terms: usize, stream: &RngStream, method: GaussianMethod) -> Result<Vec<f64>> {
    check_br(grid, terms)?;
    let mut rng = stream.rng();
    match method {
        GaussianMethod::Series => {
            let c = draw_series(&mut rng, terms);
            Ok((0..grid.len()).map(|i| br_z_value(&c, grid.coord(i)[0])).collect())
        }
        GaussianMethod::Cholesky => Ok(br_gaussian(grid, terms)?.sample(&mut rng)),
    }
}

/// `Y(t) = exp(Z(t) - σ²(t)/2)` on a one-dimensional grid.
pub fn brown_resnick_y(
    grid: &Arc<Grid>,
    terms: usize,
    stream: &RngStream,
    method: GaussianMethod,
) -> Result<SpectralPath> {
    let z = brown_resnick_z(grid, terms, stream, method)?;
    let values =
        z.iter().enumerate().map(|(i, zi)| (zi - 0.5 * sigma2_series(grid.coord(i)[0], terms)).exp()).collect();
    SpectralPath::from_values(grid.clone(), values)
}

/// The deterministic comb with `bumps` bumps.
pub fn comb_z(grid: &Arc<Grid>, bumps: usize) -> Result<SpectralPath> {
    if grid.domain() != Domain::Continuous {
        return Err(Error::Unsupported("the comb lives on a continuous mesh".into()));
    }
    let f = SpectralFunction::Shifted {
        shape: Shape::Comb { bumps },
        origin: [0, 0],
        spacing: grid.spacing(),
        weight: 1.0,
    };
    Shape::Comb { bumps }.validate(grid.dim())?;
    f.path(grid)
}

/// A shape translated to the mesh point `origin`.
pub fn compact_bump_z(grid: &Arc<Grid>, shape: &Shape, origin: Index) -> Result<SpectralPath> {
    shape.validate(grid.dim())?;
    SpectralFunction::Shifted { shape: shape.clone(), origin, spacing: grid.spacing(), weight: 1.0 }.path(grid)
}

pub fn constant_y(grid: &Arc<Grid>, c: f64) -> Result<SpectralPath> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("constant must be positive, got {c}")));
    }
    SpectralPath::from_values(grid.clone(), vec![c; grid.len()])
}

// ---------------------------------------------------------------------------
// Realized spectral functions

#[inline]
fn fold_one(slot: &mut f64, v: f64, covered: &mut usize) {
    if v > *slot {
        if *slot == 0.0 {
            *covered += 1;
        }
        *slot = v;
    }
}

/// A sampled tabulated profile on mesh offsets, as recovered by M3 extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeProfile {
    pub dim: usize,
    pub spacing: f64,
    /// Sorted offsets with non-zero value.
    pub offsets: Vec<Index>,
    pub values: Vec<f64>,
}

impl ShapeProfile {
    pub fn value_at(&self, offset: Index) -> f64 {
        self.offsets.binary_search(&offset).map_or(0.0, |p| self.values[p])
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn radius(&self) -> f64 {
        self.offsets.iter().map(|o| o[0].abs().max(o[1].abs())).max().unwrap_or(0) as f64 * self.spacing
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralFunction {
    Constant {
        c: f64,
    },
    /// Series coefficients `(N'_k, N''_k)`.
    BrownResnick {
        coefficients: Vec<[f64; 2]>,
    },
    /// Values on the grid the function was drawn for.
    Tabulated {
        values: Vec<f64>,
    },
    /// `weight · shape(x - origin·h)`.
    Shifted {
        shape: Shape,
        origin: Index,
        spacing: f64,
        weight: f64,
    },
    /// `weight · profile(x - origin·h)`.
    Profile {
        profile: Arc<ShapeProfile>,
        origin: Index,
        weight: f64,
    },
}

impl SpectralFunction {
    fn check_mesh(&self, grid: &Grid) -> Result<()> {
        let spacing = match self {
            SpectralFunction::Shifted { spacing, .. } => *spacing,
            SpectralFunction::Profile { profile, .. } => profile.spacing,
            SpectralFunction::Tabulated { values } => {
                if values.len() != grid.len() {
                    return Err(Error::GridMismatch(
                        "tabulated spectral functions can only be read on the grid they were drawn for".into(),
                    ));
                }
                return Ok(());
            }
            _ => return Ok(()),
        };
        if spacing != grid.spacing() {
            return Err(Error::GridMismatch(format!("function mesh {spacing} vs grid mesh {}", grid.spacing())));
        }
        Ok(())
    }

    /// Fold `level · Y(x)` into `values` by pointwise maximum; returns how many
    /// entries went from zero to positive.
    pub fn max_into(&self, level: f64, grid: &Grid, values: &mut [f64]) -> Result<usize> {
        self.check_mesh(grid)?;
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} grid points", values.len(), grid.len())));
        }
        let mut covered = 0;
        self.for_each_value(grid, |p, y| fold_one(&mut values[p], level * y, &mut covered));
        Ok(covered)
    }

    /// Calls `f(position, Y(x))` for grid points where `Y` may be non-zero.
    fn for_each_value(&self, grid: &Grid, mut f: impl FnMut(usize, f64)) {
        let dim = grid.dim();
        match self {
            SpectralFunction::Constant { c } => (0..grid.len()).for_each(|p| f(p, *c)),
            SpectralFunction::BrownResnick { coefficients } => {
                for p in 0..grid.len() {
                    f(p, br_log_value(coefficients, grid.coord(p)[0]).exp());
                }
            }
            SpectralFunction::Tabulated { values } => values.iter().enumerate().for_each(|(p, v)| f(p, *v)),
            SpectralFunction::Shifted { shape, origin, spacing, weight } => {
                let (a, b) = shape.index_reach(*spacing);
                let lo = [origin[0] + a, if dim == 2 { origin[1] + a } else { 0 }];
                let hi = [origin[0] + b, if dim == 2 { origin[1] + b } else { 0 }];
                grid.for_each_in_box(lo, hi, |p, idx| {
                    let x = [(idx[0] - origin[0]) as f64 * spacing, (idx[1] - origin[1]) as f64 * spacing];
                    let y = shape.eval(x, dim);
                    if y > 0.0 {
                        f(p, weight * y);
                    }
                });
            }
            SpectralFunction::Profile { profile, origin, weight } => {
                for (o, v) in profile.offsets.iter().zip(&profile.values) {
                    if let Some(p) = grid.position([origin[0] + o[0], origin[1] + o[1]]) {
                        f(p, weight * v);
                    }
                }
            }
        }
    }

    /// Values and quadrature masses on `grid`.
    pub fn path(&self, grid: &Arc<Grid>) -> Result<SpectralPath> {
        self.check_mesh(grid)?;
        let n = grid.len();
        let cell = grid.cell_measure();
        let mut values = vec![0.0; n];
        self.for_each_value(grid, |p, y| values[p] = y);
        let masses = match self {
            SpectralFunction::Shifted { shape, origin, spacing, weight } if grid.domain() == Domain::Continuous => {
                let mut m = vec![0.0; n];
                let (a, b) = shape.index_reach(*spacing);
                let dim = grid.dim();
                // Cells adjacent to the support can carry mass without a
                // non-zero value at their centre.
                let lo = [origin[0] + a - 1, if dim == 2 { origin[1] + a - 1 } else { 0 }];
                let hi = [origin[0] + b + 1, if dim == 2 { origin[1] + b + 1 } else { 0 }];
                grid.for_each_in_box(lo, hi, |p, idx| {
                    let x = [(idx[0] - origin[0]) as f64 * spacing, (idx[1] - origin[1]) as f64 * spacing];
                    m[p] = weight * shape.cell_integral(x, *spacing, dim);
                });
                m
            }
            _ => values.iter().map(|v| v * cell).collect(),
        };
        SpectralPath::with_masses(grid.clone(), values, masses)
    }

    /// Value at a single mesh index, when the function is not grid-bound.
    pub fn value_at(&self, idx: Index, spacing: f64, dim: usize) -> Option<f64> {
        let x = [idx[0] as f64 * spacing, idx[1] as f64 * spacing];
        match self {
            SpectralFunction::Constant { c } => Some(*c),
            SpectralFunction::BrownResnick { coefficients } => Some(br_log_value(coefficients, x[0]).exp()),
            SpectralFunction::Tabulated { .. } => None,
            SpectralFunction::Shifted { shape, origin, spacing: s, weight } => {
                let rel = [(idx[0] - origin[0]) as f64 * s, (idx[1] - origin[1]) as f64 * s];
                Some(weight * shape.eval(rel, dim))
            }
            SpectralFunction::Profile { profile, origin, weight } => {
                Some(weight * profile.value_at([idx[0] - origin[0], idx[1] - origin[1]]))
            }
        }
    }

    /// Whether the function can be read on grids other than its own.
    pub fn is_portable(&self) -> bool {
        !matches!(self, SpectralFunction::Tabulated { .. })
    }

    /// Translation attached to the function, if it is a translated shape.
    pub fn origin(&self) -> Option<Index> {
        match self {
            SpectralFunction::Shifted { origin, .. } | SpectralFunction::Profile { origin, .. } => Some(*origin),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Models and samplers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub model: SpectralModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectralModel {
    Constant {
        c: f64,
    },
    BrownResnick {
        #[serde(default = "default_terms")]
        terms: usize,
        #[serde(default)]
        sampler: GaussianMethod,
    },
    CompactBump {
        shape: Shape,
        /// Core radius of the placement law; defaults to the grid extent plus
        /// the support radius.
        #[serde(default)]
        placement_radius: Option<f64>,
    },
    Comb {
        /// Number of bumps; defaults to the grid radius plus one.
        #[serde(default)]
        bumps: Option<usize>,
        #[serde(default)]
        placement_radius: Option<f64>,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

fn default_terms() -> usize {
    DEFAULT_SERIES_TERMS
}

impl SpectralModel {
    pub fn constant(c: f64) -> Self {
        SpectralModel::Constant { c }
    }

    pub fn brown_resnick() -> Self {
        SpectralModel::BrownResnick { terms: DEFAULT_SERIES_TERMS, sampler: GaussianMethod::Series }
    }

    pub fn bump(shape: Shape) -> Self {
        SpectralModel::CompactBump { shape, placement_radius: None }
    }

    pub fn comb() -> Self {
        SpectralModel::Comb { bumps: None, placement_radius: None }
    }

    /// Fill in the placement radius of translated-shape models that leave it
    /// unset.
    pub fn with_placement(&self, radius: f64) -> Self {
        let mut m = self.clone();
        match &mut m {
            SpectralModel::CompactBump { placement_radius, .. } | SpectralModel::Comb { placement_radius, .. } => {
                placement_radius.get_or_insert(radius);
            }
            SpectralModel::Mixture { components } => {
                for c in components {
                    c.model = c.model.with_placement(radius);
                }
            }
            _ => {}
        }
        m
    }

    /// The translated shape behind a shape model, if any.
    pub fn shape(&self, grid: &Grid) -> Option<Shape> {
        match self {
            SpectralModel::CompactBump { shape, .. } => Some(shape.clone()),
            SpectralModel::Comb { .. } => Some(Shape::Comb { bumps: self.comb_bumps(grid) }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpectralModel::Constant { .. } => "constant",
            SpectralModel::BrownResnick { .. } => "brown_resnick",
            SpectralModel::CompactBump { .. } => "compact_bump",
            SpectralModel::Comb { .. } => "comb",
            SpectralModel::Mixture { .. } => "mixture",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            SpectralModel::Constant { c } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(invalid(format!("constant must be positive, got {c}")));
                }
            }
            SpectralModel::BrownResnick { terms, .. } => {
                if dim != 1 {
                    return Err(Error::Unsupported("Brown–Resnick model is one-dimensional".into()));
                }
                if *terms == 0 || *terms > MAX_SERIES_TERMS {
                    return Err(invalid(format!("series terms must be in 1..={MAX_SERIES_TERMS}")));
                }
            }
            SpectralModel::CompactBump { shape, placement_radius } => {
                if matches!(shape, Shape::Comb { .. }) {
                    return Err(invalid("use the comb model for comb shapes"));
                }
                shape.validate(dim)?;
                check_placement(*placement_radius)?;
            }
            SpectralModel::Comb { bumps, placement_radius } => {
                if dim != 1 {
                    return Err(Error::Unsupported("the comb model is one-dimensional".into()));
                }
                if *bumps == Some(0) {
                    return Err(invalid("comb needs at least one bump"));
                }
                check_placement(*placement_radius)?;
            }
            SpectralModel::Mixture { components } => {
                if components.is_empty() {
                    return Err(invalid("mixture needs at least one component"));
                }
                for c in components {
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return Err(invalid("mixture weights must be positive"));
                    }
                    c.model.validate(dim)?;
                }
            }
        }
        Ok(())
    }

    /// Whether every draw is bounded by a known constant on a finite grid.
    pub fn is_bounded(&self) -> bool {
        match self {
            SpectralModel::BrownResnick { .. } => false,
            SpectralModel::Mixture { components } => components.iter().all(|c| c.model.is_bounded()),
            _ => true,
        }
    }

    /// `E[Y(x)]` at mesh points, i.e. the Fréchet scale of the field.
    pub fn mean_value(&self, grid: &Grid) -> Result<f64> {
        self.validate(grid.dim())?;
        let h = grid.spacing();
        Ok(match self {
            SpectralModel::Constant { c } => *c,
            SpectralModel::BrownResnick { .. } => 1.0,
            SpectralModel::CompactBump { shape, .. } => shape.mesh_mass(h, grid.dim()),
            SpectralModel::Comb { .. } => Shape::Comb { bumps: self.comb_bumps(grid) }.mesh_mass(h, 1),
            SpectralModel::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut m = 0.0;
                for c in components {
                    m += c.weight / total * c.model.mean_value(grid)?;
                }
                m
            }
        })
    }

    fn comb_bumps(&self, grid: &Grid) -> usize {
        match self {
            SpectralModel::Comb { bumps: Some(n), .. } => *n,
            _ => grid.radius().ceil() as usize + 1,
        }
    }

    /// Bind the model to a grid.
    pub fn prepare(&self, grid: &Arc<Grid>) -> Result<SpectralSampler> {
        self.validate(grid.dim())?;
        let kind = match self {
            SpectralModel::Constant { c } => SamplerKind::Constant(*c),
            SpectralModel::BrownResnick { terms, sampler } => match sampler {
                GaussianMethod::Series => {
                    SamplerKind::Series { terms: *terms, table: TrigTable::new(grid, *terms).map(Arc::new) }
                }
                GaussianMethod::Cholesky => {
                    SamplerKind::Cholesky { terms: *terms, gaussian: Arc::new(br_gaussian(grid, *terms)?) }
                }
            },
            SpectralModel::CompactBump { shape, placement_radius } => {
                shifted_kind(shape.clone(), *placement_radius, grid)
            }
            SpectralModel::Comb { placement_radius, .. } => {
                if grid.domain() != Domain::Continuous {
                    return Err(Error::Unsupported("the comb lives on a continuous mesh".into()));
                }
                shifted_kind(Shape::Comb { bumps: self.comb_bumps(grid) }, *placement_radius, grid)
            }
            SpectralModel::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut acc = 0.0;
                let mut cumulative = Vec::with_capacity(components.len());
                let mut parts = Vec::with_capacity(components.len());
                for c in components {
                    acc += c.weight / total;
                    cumulative.push(acc);
                    parts.push(c.model.prepare(grid)?);
                }
                SamplerKind::Mixture { cumulative, parts }
            }
        };
        Ok(SpectralSampler { grid: grid.clone(), kind })
    }
}

fn check_placement(r: Option<f64>) -> Result<()> {
    match r {
        Some(r) if !(r > 0.0 && r.is_finite()) => Err(invalid(format!("placement_radius must be positive, got {r}"))),
        _ => Ok(()),
    }
}

fn shifted_kind(shape: Shape, placement_radius: Option<f64>, grid: &Grid) -> SamplerKind {
    let h = grid.spacing();
    let core = match placement_radius {
        Some(r) => (r / h).ceil() as i64,
        None => {
            let (lo, hi) = grid.bounding_box();
            let ext = (0..grid.dim()).map(|k| lo[k].abs().max(hi[k].abs())).max().unwrap_or(0);
            ext + (shape.support_radius() / h).ceil() as i64
        }
    };
    SamplerKind::Shifted { placement: Placement::new(grid.dim(), core.max(1)), shape }
}

/// Placement law on mesh indices: an even mixture of the uniform law on the
/// core box `[-core, core]^d` and a product of discrete Laplace laws with
/// `P[j] ∝ exp(-|j|/core)`.
#[derive(Clone, Debug)]
struct Placement {
    dim: usize,
    core: i64,
    box_count: f64,
    rho: f64,
    geometric: Geometric,
}

impl Placement {
    fn new(dim: usize, core: i64) -> Self {
        let rho = (-1.0 / core as f64).exp();
        Self {
            dim,
            core,
            box_count: ((2 * core + 1) as f64).powi(dim as i32),
            rho,
            geometric: Geometric::new(1.0 - rho).expect("0 < 1 - rho < 1"),
        }
    }

    fn pmf(&self, idx: Index) -> f64 {
        let inside = (0..self.dim).all(|k| idx[k].abs() <= self.core);
        let uniform = if inside { 0.5 / self.box_count } else { 0.0 };
        let norm = (1.0 - self.rho) / (1.0 + self.rho);
        let laplace: f64 = (0..self.dim).map(|k| norm * (-(idx[k].abs() as f64) / self.core as f64).exp()).product();
        uniform + 0.5 * laplace
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Index {
        let mut idx = [0i64; 2];
        if rng.random::<bool>() {
            for v in idx.iter_mut().take(self.dim) {
                *v = rng.random_range(-self.core..=self.core);
            }
        } else {
            for v in idx.iter_mut().take(self.dim) {
                *v = self.geometric.sample(rng) as i64 - self.geometric.sample(rng) as i64;
            }
        }
        idx
    }
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Constant(f64),
    Series { terms: usize, table: Option<Arc<TrigTable>> },
    Cholesky { terms: usize, gaussian: Arc<GaussianSampler> },
    Shifted { shape: Shape, placement: Placement },
    Mixture { cumulative: Vec<f64>, parts: Vec<SpectralSampler> },
}

/// A model bound to a grid; cheap to clone and share across workers.
#[derive(Clone, Debug)]
pub struct SpectralSampler {
    grid: Arc<Grid>,
    kind: SamplerKind,
}

impl SpectralSampler {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn draw(&self, stream: &RngStream) -> SpectralFunction {
        self.draw_with(&mut stream.rng())
    }

    pub fn draw_with<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralFunction {
        match &self.kind {
            SamplerKind::Constant(c) => SpectralFunction::Constant { c: *c },
            SamplerKind::Series { terms, .. } => {
                SpectralFunction::BrownResnick { coefficients: draw_series(rng, *terms) }
            }
            SamplerKind::Cholesky { terms, gaussian } => {
                let z = gaussian.sample(rng);
                let values = z
                    .iter()
                    .enumerate()
                    .map(|(i, zi)| (zi - 0.5 * sigma2_series(self.grid.coord(i)[0], *terms)).exp())
                    .collect();
                SpectralFunction::Tabulated { values }
            }
            SamplerKind::Shifted { shape, placement } => {
                let origin = placement.sample(rng);
                let h = self.grid.spacing();
                let weight = h.powi(self.grid.dim() as i32) / placement.pmf(origin);
                SpectralFunction::Shifted { shape: shape.clone(), origin, spacing: h, weight }
            }
            SamplerKind::Mixture { cumulative, parts } => {
                let u: f64 = rng.random();
                let k = cumulative.iter().position(|c| u < *c).unwrap_or(parts.len() - 1);
                parts[k].draw_with(rng)
            }
        }
    }

    /// [`SpectralFunction::max_into`] on this sampler's grid, using the trig
    /// table for series draws (same bits, fewer `sin_cos` calls).
    pub fn fold(&self, f: &SpectralFunction, level: f64, values: &mut [f64]) -> Result<usize> {
        if let (SamplerKind::Series { table: Some(t), .. }, SpectralFunction::BrownResnick { coefficients }) =
            (&self.kind, f)
        {
            if coefficients.len() == t.terms && values.len() == self.grid.len() {
                let mut covered = 0;
                for (p, slot) in values.iter_mut().enumerate() {
                    fold_one(slot, level * t.log_value(p, coefficients).exp(), &mut covered);
                }
                return Ok(covered);
            }
        }
        f.max_into(level, &self.grid, values)
    }

    /// `f` on this sampler's grid.
    pub fn path_of(&self, f: &SpectralFunction) -> Result<SpectralPath> {
        if let (SamplerKind::Series { table: Some(t), .. }, SpectralFunction::BrownResnick { coefficients }) =
            (&self.kind, f)
        {
            if coefficients.len() == t.terms {
                let values = (0..self.grid.len()).map(|p| t.log_value(p, coefficients).exp()).collect();
                return SpectralPath::from_values(self.grid.clone(), values);
            }
        }
        f.path(&self.grid)
    }

    /// An almost-sure bound on `sup_x Y(x)` over this sampler's grid, when one
    /// exists.
    pub fn sup_bound(&self) -> Option<f64> {
        match &self.kind {
            SamplerKind::Constant(c) => Some(*c),
            SamplerKind::Series { .. } | SamplerKind::Cholesky { .. } => None,
            SamplerKind::Shifted { shape, placement } => {
                let h = self.grid.spacing();
                let (a, b) = shape.index_reach(h);
                let (lo, hi) = self.grid.bounding_box();
                // Origins that can reach the grid: x - X ∈ support. The farthest
                // corner of that box has the smallest placement mass.
                let mut corner = [0i64; 2];
                for k in 0..self.grid.dim() {
                    let from = lo[k] - b;
                    let to = hi[k] - a;
                    corner[k] = if from.abs() > to.abs() { from } else { to };
                }
                Some(shape.sup() * h.powi(self.grid.dim() as i32) / placement.pmf(corner))
            }
            SamplerKind::Mixture { parts, .. } => {
                parts.iter().map(|p| p.sup_bound()).try_fold(0.0f64, |acc, b| b.map(|b| acc.max(b)))
            }
        }
    }
}
