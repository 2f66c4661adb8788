//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use maxstab::catalog::{Shape, SpectralModel};
use maxstab::grid::{Grid, Mesh};
use maxstab::rng::RngStream;
use maxstab::{Domain, SpectralPath};

pub fn lattice_window(radius: f64) -> Arc<Grid> {
    Arc::new(Mesh::new(1, Domain::Lattice, 1.0).unwrap().window(radius).unwrap())
}

pub fn continuous_window(radius: f64) -> Arc<Grid> {
    Arc::new(Mesh::new(1, Domain::Continuous, 0.125).unwrap().window(radius).unwrap())
}

pub fn bump() -> SpectralModel {
    SpectralModel::bump(Shape::triangle()).with_placement(4.0)
}

/// One spectral path of `model` on `grid`.
pub fn path(model: &SpectralModel, grid: &Arc<Grid>, seed: u64) -> SpectralPath {
    let sampler = model.prepare(grid).unwrap();
    sampler.path_of(&sampler.draw(&RngStream::new(seed, 0))).unwrap()
}
