//! Splitting a field by the cone labels of its atoms, and recovering mixed
//! moving maximum atoms from spectral ones.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ShapeProfile;
use crate::cones::{classify_path, AtomLabels, Axis, Label, Thresholds};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Index, Point};
use crate::sim::MaxStableField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Inconclusive atoms go to a third bucket.
    #[default]
    Strict,
    AssignToPart1,
    AssignToPart2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bucket {
    Part1,
    Part2,
    Unassigned,
}

fn bucket(label: Label, axis: Axis, policy: Policy) -> Bucket {
    match (axis, label) {
        (Axis::Hopf, Label::Conservative) | (Axis::Neveu, Label::Positive) => Bucket::Part1,
        (Axis::Hopf, Label::Dissipative) | (Axis::Neveu, Label::Null) => Bucket::Part2,
        _ => match policy {
            Policy::Strict => Bucket::Unassigned,
            Policy::AssignToPart1 => Bucket::Part1,
            Policy::AssignToPart2 => Bucket::Part2,
        },
    }
}

/// `part1` holds conservative (hopf) or positive (neveu) atoms, `part2`
/// dissipative or null ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub axis: Axis,
    pub policy: Policy,
    pub part1: MaxStableField,
    pub part2: MaxStableField,
    pub unassigned: MaxStableField,
    /// Positions of each bucket's atoms in the source field's log.
    pub part1_atoms: Vec<usize>,
    pub part2_atoms: Vec<usize>,
    pub unassigned_atoms: Vec<usize>,
}

impl Decomposition {
    /// `part1 ∨ part2 ∨ unassigned`.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.part1
            .values()
            .iter()
            .zip(self.part2.values())
            .zip(self.unassigned.values())
            .map(|((a, b), c)| a.max(*b).max(*c))
            .collect()
    }
}

/// Route atoms by their label on `axis`; `verdicts[i]` belongs to atom `i`.
pub fn split_atoms(
    field: &MaxStableField,
    axis: Axis,
    verdicts: &[AtomLabels],
    policy: Policy,
) -> Result<Decomposition> {
    if field.truncation().log_overflow() {
        return Err(Error::LogOverflow(field.atoms().len()));
    }
    if verdicts.len() < field.atoms().len() {
        return Err(Error::MissingVerdict(verdicts.len()));
    }
    let mut ids = [Vec::new(), Vec::new(), Vec::new()];
    for (i, v) in verdicts.iter().take(field.atoms().len()).enumerate() {
        let k = match bucket(v.on(axis), axis, policy) {
            Bucket::Part1 => 0,
            Bucket::Part2 => 1,
            Bucket::Unassigned => 2,
        };
        ids[k].push(i);
    }
    let [p1, p2, un] = ids;
    Ok(Decomposition {
        axis,
        policy,
        part1: field.subset(&p1)?,
        part2: field.subset(&p2)?,
        unassigned: field.subset(&un)?,
        part1_atoms: p1,
        part2_atoms: p2,
        unassigned_atoms: un,
    })
}

/// [`split_atoms`] with the labels carried by the atoms themselves.
pub fn split_labeled(field: &MaxStableField, axis: Axis, policy: Policy) -> Result<Decomposition> {
    let labels = field
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| a.labels.ok_or(Error::MissingVerdict(i)))
        .collect::<Result<Vec<_>>>()?;
    split_atoms(field, axis, &labels, policy)
}

/// Classify every atom's path on `grid`, usually a wider window than the
/// field's own. Atoms vanishing on `grid` are inconclusive.
pub fn classify_atoms(
    field: &MaxStableField,
    grid: &Arc<Grid>,
    radii: &[f64],
    thresholds: &Thresholds,
) -> Result<Vec<AtomLabels>> {
    field
        .atoms()
        .par_iter()
        .map(|a| {
            let g = if a.function.is_portable() { grid } else { field.grid() };
            let path = a.path(g)?;
            if path.is_zero() {
                return Ok(AtomLabels {
                    hopf: Label::Inconclusive,
                    decay: Label::Inconclusive,
                    neveu: Label::Inconclusive,
                    dual_conflict: false,
                });
            }
            Ok(classify_path(&path, radii, thresholds, None)?.labels())
        })
        .collect()
}

pub const DEFAULT_BOUNDARY_MARGIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct M3Atom {
    /// Argmax of the atom's path (mesh index).
    pub x: Index,
    pub coord: Point,
    pub v: f64,
    /// `Y(X + ·) / max Y` on the field grid, non-zero offsets only.
    pub z: Arc<ShapeProfile>,
    /// Position of the source atom in the field's log.
    pub source: usize,
}

impl M3Atom {
    /// `V · Z(idx - X)`.
    pub fn value_at(&self, idx: Index) -> f64 {
        self.v * self.z.value_at([idx[0] - self.x[0], idx[1] - self.x[1]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct M3Extraction {
    pub atoms: Vec<M3Atom>,
    /// Atoms whose argmax falls in the boundary margin.
    pub excluded_boundary: usize,
    /// Atoms vanishing on the grid.
    pub excluded_zero: usize,
    pub margin: f64,
}

/// Recentre every logged atom at its argmax (lexicographically smallest on
/// ties). Atoms peaking within `margin_frac · window radius` of the grid's
/// bounding box are left out and counted.
pub fn extract_m3(field: &MaxStableField, margin_frac: f64) -> Result<M3Extraction> {
    if !(0.0..0.5).contains(&margin_frac) {
        return Err(invalid(format!("boundary margin fraction must lie in [0, 0.5), got {margin_frac}")));
    }
    let grid = field.grid();
    let h = grid.spacing();
    let margin = margin_frac * grid.radius();
    let (lo, hi) = grid.bounding_box();
    let mut out = M3Extraction { atoms: Vec::new(), excluded_boundary: 0, excluded_zero: 0, margin };
    for (i, a) in field.atoms().iter().enumerate() {
        let path = a.path(grid)?;
        let (mut best, mut m) = (0, 0.0);
        for (p, v) in path.values().iter().enumerate() {
            if *v > m {
                best = p;
                m = *v;
            }
        }
        if m == 0.0 {
            out.excluded_zero += 1;
            continue;
        }
        let x = grid.index(best);
        let edge = (0..grid.dim()).map(|k| (x[k] - lo[k]).min(hi[k] - x[k])).min().unwrap_or(0) as f64 * h;
        if edge < margin {
            out.excluded_boundary += 1;
            continue;
        }
        let mut offsets = Vec::new();
        let mut values = Vec::new();
        for (p, v) in path.values().iter().enumerate() {
            if *v > 0.0 {
                let idx = grid.index(p);
                offsets.push([idx[0] - x[0], idx[1] - x[1]]);
                values.push(v / m);
            }
        }
        let z = Arc::new(ShapeProfile { dim: grid.dim(), spacing: h, offsets, values });
        out.atoms.push(M3Atom { x, coord: grid.coord(best), v: a.u * m, z, source: i });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceRow {
    pub a: f64,
    pub b: f64,
    pub joint: f64,
    pub product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub n_reps: usize,
    pub point: Index,
    pub rows: Vec<IndependenceRow>,
    pub max_abs_deviation: f64,
}

/// Compare `P̂[η₁(p) ≤ a, η₂(p) ≤ b]` with `P̂[η₁(p) ≤ a]·P̂[η₂(p) ≤ b]` across
/// replications, on every `(a, b)` pair of the given levels.
pub fn independence_check(
    decompositions: &[Decomposition],
    point: Index,
    levels_a: &[f64],
    levels_b: &[f64],
) -> Result<IndependenceReport> {
    if decompositions.is_empty() {
        return Err(invalid("independence check needs at least one replication"));
    }
    let pairs = decompositions
        .iter()
        .map(|d| match (d.part1.value_at(point), d.part2.value_at(point)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::GridMismatch(format!("point {point:?} is not on the field grid"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len() as f64;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &a in levels_a {
        let pa = pairs.iter().filter(|p| p.0 <= a).count() as f64 / n;
        for &b in levels_b {
            let pb = pairs.iter().filter(|p| p.1 <= b).count() as f64 / n;
            let joint = pairs.iter().filter(|p| p.0 <= a && p.1 <= b).count() as f64 / n;
            worst = worst.max((joint - pa * pb).abs());
            rows.push(IndependenceRow { a, b, joint, product: pa * pb });
        }
    }
    Ok(IndependenceReport { n_reps: pairs.len(), point, rows, max_abs_deviation: worst })
}
