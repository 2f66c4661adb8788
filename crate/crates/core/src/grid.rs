//! Finite point sets on `ℤ^d` or on a regular mesh of `ℝ^d`, `d ∈ {1, 2}`.
//!
//! Points are stored as integer indices; the coordinate of index `i` is
//! `i * spacing`. Indices are kept in lexicographic order, which is also the
//! tie-break order used for argmax. Every point carries the quadrature weight
//! `spacing^d` (counting measure on the lattice).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Lattice,
    Continuous,
}

pub type Index = [i64; 2];
pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    domain: Domain,
    spacing: f64,
    indices: Vec<Index>,
    /// Inclusive index box when `indices` enumerates every point of it.
    full_box: Option<(Index, Index)>,
}

impl Grid {
    /// All mesh points of `[-radius, radius]^d`.
    pub fn window(dim: usize, domain: Domain, spacing: f64, radius: f64) -> Result<Self> {
        Self::boxed(dim, domain, spacing, [-radius; 2], [radius; 2])
    }

    pub fn lattice(dim: usize, radius: f64) -> Result<Self> {
        Self::window(dim, Domain::Lattice, 1.0, radius)
    }

    pub fn continuous(dim: usize, spacing: f64, radius: f64) -> Result<Self> {
        Self::window(dim, Domain::Continuous, spacing, radius)
    }

    /// All mesh points of the box `[lo, hi]` (only the first `dim` entries are read).
    pub fn boxed(dim: usize, domain: Domain, spacing: f64, lo: Point, hi: Point) -> Result<Self> {
        check_header(dim, domain, spacing)?;
        let mut ilo = [0i64; 2];
        let mut ihi = [0i64; 2];
        for k in 0..dim {
            if !(lo[k] <= hi[k]) {
                return Err(invalid(format!("empty box along axis {k}: [{}, {}]", lo[k], hi[k])));
            }
            ilo[k] = (lo[k] / spacing - 1e-9).ceil() as i64;
            ihi[k] = (hi[k] / spacing + 1e-9).floor() as i64;
            if ilo[k] > ihi[k] {
                return Err(invalid(format!("box along axis {k} contains no mesh point")));
            }
        }
        let mut indices = Vec::new();
        match dim {
            1 => indices.extend((ilo[0]..=ihi[0]).map(|i| [i, 0])),
            _ => {
                for i in ilo[0]..=ihi[0] {
                    indices.extend((ilo[1]..=ihi[1]).map(|j| [i, j]));
                }
            }
        }
        Ok(Self { dim, domain, spacing, indices, full_box: Some((ilo, ihi)) })
    }

    /// Arbitrary point set given by mesh indices; duplicates are rejected.
    pub fn from_indices(dim: usize, domain: Domain, spacing: f64, mut indices: Vec<Index>) -> Result<Self> {
        check_header(dim, domain, spacing)?;
        if indices.is_empty() {
            return Err(invalid("grid must contain at least one point"));
        }
        if dim == 1 && indices.iter().any(|i| i[1] != 0) {
            return Err(invalid("one-dimensional grid indices must have a zero second component"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate grid points"));
        }
        Ok(Self { dim, domain, spacing, indices, full_box: None })
    }

    /// One-dimensional point set from coordinates, each snapped to the mesh.
    pub fn from_coords_1d(domain: Domain, spacing: f64, coords: &[f64]) -> Result<Self> {
        let mut idx = Vec::with_capacity(coords.len());
        for &x in coords {
            let i = (x / spacing).round();
            if ((i * spacing) - x).abs() > 1e-9 * spacing.max(x.abs()) {
                return Err(invalid(format!("coordinate {x} is not on the mesh of spacing {spacing}")));
            }
            if !idx.contains(&[i as i64, 0]) {
                idx.push([i as i64, 0]);
            }
        }
        Self::from_indices(1, domain, spacing, idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> Mesh {
        Mesh { dim: self.dim, domain: self.domain, spacing: self.spacing }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn index(&self, i: usize) -> Index {
        self.indices[i]
    }

    pub fn coord(&self, i: usize) -> Point {
        let [a, b] = self.indices[i];
        [a as f64 * self.spacing, b as f64 * self.spacing]
    }

    pub fn coord_of(&self, idx: Index) -> Point {
        [idx[0] as f64 * self.spacing, idx[1] as f64 * self.spacing]
    }

    /// Quadrature weight of one point.
    pub fn cell_measure(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Sup-norm of a point's coordinate.
    pub fn norm(&self, i: usize) -> f64 {
        let [a, b] = self.indices[i];
        a.abs().max(b.abs()) as f64 * self.spacing
    }

    /// Largest sup-norm over the grid.
    pub fn radius(&self) -> f64 {
        (0..self.len()).map(|i| self.norm(i)).fold(0.0, f64::max)
    }

    pub fn bounding_box(&self) -> (Index, Index) {
        if let Some(b) = self.full_box {
            return b;
        }
        let mut lo = [i64::MAX, i64::MAX];
        let mut hi = [i64::MIN, i64::MIN];
        for idx in &self.indices {
            for k in 0..2 {
                lo[k] = lo[k].min(idx[k]);
                hi[k] = hi[k].max(idx[k]);
            }
        }
        (lo, hi)
    }

    pub fn is_full_box(&self) -> bool {
        self.full_box.is_some()
    }

    /// Position of a mesh index in the grid, if present.
    pub fn position(&self, idx: Index) -> Option<usize> {
        match self.full_box {
            Some((lo, hi)) => {
                if (0..2).any(|k| idx[k] < lo[k] || idx[k] > hi[k]) {
                    return None;
                }
                let w = (hi[1] - lo[1] + 1) as usize;
                Some((idx[0] - lo[0]) as usize * w + (idx[1] - lo[1]) as usize)
            }
            None => self.indices.binary_search(&idx).ok(),
        }
    }

    /// Visit every grid point whose index lies in the inclusive box `[lo, hi]`.
    pub fn for_each_in_box(&self, lo: Index, hi: Index, mut f: impl FnMut(usize, Index)) {
        match self.full_box {
            Some((blo, bhi)) => {
                let a0 = lo[0].max(blo[0]);
                let b0 = hi[0].min(bhi[0]);
                let a1 = lo[1].max(blo[1]);
                let b1 = hi[1].min(bhi[1]);
                if a0 > b0 || a1 > b1 {
                    return;
                }
                let w = (bhi[1] - blo[1] + 1) as usize;
                for i in a0..=b0 {
                    let row = (i - blo[0]) as usize * w;
                    for j in a1..=b1 {
                        f(row + (j - blo[1]) as usize, [i, j]);
                    }
                }
            }
            None => {
                for (p, idx) in self.indices.iter().enumerate() {
                    if (0..2).all(|k| idx[k] >= lo[k] && idx[k] <= hi[k]) {
                        f(p, *idx);
                    }
                }
            }
        }
    }
}

/// Dimension, domain and spacing shared by a family of grids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dim: usize,
    pub domain: Domain,
    pub spacing: f64,
}

impl Mesh {
    pub fn new(dim: usize, domain: Domain, spacing: f64) -> Result<Self> {
        check_header(dim, domain, spacing)?;
        Ok(Self { dim, domain, spacing })
    }

    pub fn validate(&self) -> Result<()> {
        check_header(self.dim, self.domain, self.spacing)
    }

    pub fn window(&self, radius: f64) -> Result<Grid> {
        Grid::window(self.dim, self.domain, self.spacing, radius)
    }

    /// `[lo, hi]^d`.
    pub fn cube(&self, lo: f64, hi: f64) -> Result<Grid> {
        Grid::boxed(self.dim, self.domain, self.spacing, [lo; 2], [hi; 2])
    }

    /// Mesh index of a coordinate that must lie on the mesh.
    pub fn index_of(&self, x: f64) -> Result<i64> {
        let i = (x / self.spacing).round();
        if ((i * self.spacing) - x).abs() > 1e-9 * self.spacing.max(x.abs()) {
            return Err(invalid(format!("coordinate {x} is not on the mesh of spacing {}", self.spacing)));
        }
        Ok(i as i64)
    }

    /// Points `(x, 0, ..)` along the first axis.
    pub fn axis_points(&self, coords: &[f64]) -> Result<Grid> {
        let mut idx = Vec::with_capacity(coords.len());
        for &x in coords {
            let i = [self.index_of(x)?, 0];
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
        Grid::from_indices(self.dim, self.domain, self.spacing, idx)
    }
}

fn check_header(dim: usize, domain: Domain, spacing: f64) -> Result<()> {
    if !(dim == 1 || dim == 2) {
        return Err(invalid(format!("dimension must be 1 or 2, got {dim}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid(format!("spacing must be positive, got {spacing}")));
    }
    if domain == Domain::Lattice && spacing != 1.0 {
        return Err(invalid("lattice grids have unit spacing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_enumerates_lexicographically() {
        let g = Grid::lattice(2, 1.0).unwrap();
        assert_eq!(g.len(), 9);
        assert!(g.indices().windows(2).all(|w| w[0] < w[1]));
        for (p, idx) in g.indices().iter().enumerate() {
            assert_eq!(g.position(*idx), Some(p));
        }
        assert_eq!(g.position([2, 0]), None);
    }

    #[test]
    fn continuous_window_spacing() {
        let g = Grid::continuous(1, 0.125, 2.0).unwrap();
        assert_eq!(g.len(), 33);
        assert_eq!(g.coord(0)[0], -2.0);
        assert_eq!(g.radius(), 2.0);
        assert_eq!(g.cell_measure(), 0.125);
    }

    #[test]
    fn point_sets_and_validation() {
        let g = Grid::from_coords_1d(Domain::Continuous, 0.125, &[3.0, 0.0]).unwrap();
        assert_eq!(g.indices(), &[[0, 0], [24, 0]]);
        assert_eq!(g.position([24, 0]), Some(1));
        assert!(Grid::from_coords_1d(Domain::Continuous, 0.125, &[0.1]).is_err());
        assert!(Grid::window(3, Domain::Lattice, 1.0, 2.0).is_err());
        assert!(Grid::window(1, Domain::Lattice, 0.5, 2.0).is_err());
        assert!(Grid::from_indices(1, Domain::Lattice, 1.0, vec![[1, 0], [1, 0]]).is_err());
    }

    #[test]
    fn box_visit_matches_filter() {
        let g = Grid::lattice(2, 3.0).unwrap();
        let mut seen = Vec::new();
        g.for_each_in_box([-1, 2], [5, 9], |p, idx| seen.push((p, idx)));
        let expect: Vec<_> =
            g.indices().iter().enumerate().filter(|(_, i)| i[0] >= -1 && i[1] >= 2).map(|(p, i)| (p, *i)).collect();
        assert_eq!(seen, expect);
    }
}
