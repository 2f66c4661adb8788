//! Simulation and spectral-path analysis of stationary max-stable processes.
//!
//! Fields are built from the de Haan representation `η(x) = max_i U_i Y_i(x)`
//! or as mixed moving maxima, on finite grids of `ℤ^d` or of a regular mesh
//! of `ℝ^d`. Spectral paths can be classified along the conservative /
//! dissipative and positive / null axes, fields split by those labels, and
//! ergodicity, mixing and the mixed-moving-maximum property probed by Monte
//! Carlo.

pub mod catalog;
pub mod cones;
pub mod decompose;
pub mod diagnostics;
pub mod error;
pub mod export;
pub mod grid;
pub mod rng;
pub mod sim;
pub mod stats;

pub use catalog::{Shape, SpectralFunction, SpectralModel, SpectralPath, SpectralSampler};
pub use cones::{Axis, Label, TestKind, Thresholds};
pub use decompose::{Decomposition, Policy};
pub use diagnostics::{DiagnosticConfig, DiagnosticReport, Outcome};
pub use error::{Error, ErrorClass, Result};
pub use grid::{Domain, Grid, Mesh};
pub use rng::RngStream;
pub use sim::{MaxStableField, SimConfig, StopRule};
