//! Run configuration: TOML in, fully resolved (every default filled in) out.

use std::path::PathBuf;

use maxstab::cones::{default_radii, Axis, Thresholds};
use maxstab::decompose::{Policy, DEFAULT_BOUNDARY_MARGIN};
use maxstab::diagnostics::DiagnosticConfig;
use maxstab::grid::{Domain, Mesh};
use maxstab::sim::{DEFAULT_FIXED_ATOMS, DEFAULT_LOG_CAP, DEFAULT_MAX_ATOMS};
use maxstab::SpectralModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub stream_id: u64,
    pub out: Option<PathBuf>,
    pub model: SpectralModel,
    pub grid: GridSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub classify: ClassifySpec,
    #[serde(default)]
    pub decompose: DecomposeSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "one")]
    pub dim: usize,
    pub domain: Domain,
    /// 1 on the lattice, 1/8 on continuous meshes.
    pub spacing: Option<f64>,
    /// Half-width of the simulation window.
    pub radius: f64,
    /// Mixed-moving-maximum padding; defaults to the shape's support radius.
    pub padding: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Dehaan,
    M3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Threshold,
    FixedN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub method: Method,
    /// Threshold for bounded models, fixed_n otherwise.
    pub mode: Option<Mode>,
    #[serde(default = "default_atoms")]
    pub n_atoms: usize,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default = "default_log_cap")]
    pub log_cap: usize,
    #[serde(default = "default_max_atoms")]
    pub max_atoms: usize,
}

fn default_atoms() -> usize {
    DEFAULT_FIXED_ATOMS
}
fn default_reps() -> usize {
    10
}
fn default_log_cap() -> usize {
    DEFAULT_LOG_CAP
}
fn default_max_atoms() -> usize {
    DEFAULT_MAX_ATOMS
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            method: Method::default(),
            mode: None,
            n_atoms: default_atoms(),
            n_reps: default_reps(),
            log_cap: default_log_cap(),
            max_atoms: default_max_atoms(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySpec {
    /// Window the paths are classified on; defaults to radius 1024 in one
    /// dimension and 512 mesh steps in two (about 10^6 points).
    pub window_radius: Option<f64>,
    pub radii: Option<Vec<f64>>,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub sup_local_halfwidth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSpec {
    #[serde(default = "default_axis")]
    pub axis: Axis,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default = "default_margin")]
    pub boundary_margin: f64,
}

fn default_axis() -> Axis {
    Axis::Hopf
}
fn default_margin() -> f64 {
    DEFAULT_BOUNDARY_MARGIN
}

impl Default for DecomposeSpec {
    fn default() -> Self {
        Self { axis: default_axis(), policy: Policy::default(), boundary_margin: default_margin() }
    }
}

fn cfg_err(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { path: path.to_string(), message: msg.into() }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| cfg_err("", e.to_string().trim_end()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            cfg_err(&path, e.into_inner().message().trim_end())
        })
    }

    /// Fill every default in place and validate; the result is what gets
    /// echoed into the manifest.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        if self.seed.is_none() {
            return Err(cfg_err("seed", "missing; set `seed` in the config or pass --seed"));
        }
        let g = &mut self.grid;
        if !(1..=2).contains(&g.dim) {
            return Err(cfg_err("grid.dim", "must be 1 or 2"));
        }
        let spacing = *g.spacing.get_or_insert(match g.domain {
            Domain::Lattice => 1.0,
            Domain::Continuous => 0.125,
        });
        if !(g.radius >= 0.0) || !g.radius.is_finite() {
            return Err(cfg_err("grid.radius", "must be a non-negative number"));
        }
        let dim = g.dim;
        self.mesh().map_err(|e| cfg_err("grid.spacing", e.to_string()))?;
        self.model.validate(dim).map_err(|e| cfg_err("model", e.to_string()))?;

        let s = &mut self.simulation;
        if s.n_reps == 0 {
            return Err(cfg_err("simulation.n_reps", "empty run"));
        }
        if s.n_atoms == 0 {
            return Err(cfg_err("simulation.n_atoms", "empty run"));
        }
        let mode = *s.mode.get_or_insert(if self.model.is_bounded() { Mode::Threshold } else { Mode::FixedN });
        if mode == Mode::Threshold && !self.model.is_bounded() {
            return Err(cfg_err(
                "simulation.mode",
                format!("threshold stopping needs a bounded model, {} is not", self.model.name()),
            ));
        }
        if s.method == Method::M3
            && self.model.shape(&self.mesh().expect("checked").window(0.0).expect("origin")).is_none()
        {
            return Err(cfg_err("simulation.method", "m3 needs a compact_bump or comb model"));
        }

        let c = &mut self.classify;
        let window = *c.window_radius.get_or_insert(if dim == 1 { 1024.0 } else { 512.0 * spacing });
        if !(window > 0.0) {
            return Err(cfg_err("classify.window_radius", "must be positive"));
        }
        let radii = c.radii.get_or_insert_with(|| default_radii(window));
        if radii.len() < 2 || radii.windows(2).any(|w| !(w[0] < w[1])) || radii[0] <= 0.0 {
            return Err(cfg_err("classify.radii", "need at least two increasing positive radii"));
        }
        if *radii.last().expect("non-empty") > window * (1.0 + 1e-12) {
            return Err(cfg_err("classify.radii", "largest radius exceeds classify.window_radius"));
        }
        c.thresholds.validate().map_err(|e| cfg_err("classify.thresholds", e.to_string()))?;
        if !(0.0..0.5).contains(&self.decompose.boundary_margin) {
            return Err(cfg_err("decompose.boundary_margin", "must lie in [0, 0.5)"));
        }
        self.diagnostics.validate().map_err(|e| cfg_err("diagnostics", e.to_string()))?;
        Ok(())
    }

    pub fn mesh(&self) -> maxstab::Result<Mesh> {
        Mesh::new(self.grid.dim, self.grid.domain, self.grid.spacing.unwrap_or(1.0))
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved config has a seed")
    }

    /// SHA-256 of the resolved config's canonical JSON.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 7
[model]
kind = "constant"
c = 1.0
[grid]
domain = "lattice"
radius = 4
"#;

    #[test]
    fn defaults_are_filled() {
        let mut c = RunConfig::parse(BASIC).unwrap();
        c.resolve().unwrap();
        assert_eq!(c.grid.spacing, Some(1.0));
        assert_eq!(c.simulation.mode, Some(Mode::Threshold));
        assert_eq!(c.classify.window_radius, Some(1024.0));
        // Round trip through the echoed form.
        let mut again = RunConfig::parse(&c.to_toml()).unwrap();
        again.resolve().unwrap();
        assert_eq!(again, c);
        assert_eq!(again.digest(), c.digest());
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad = BASIC.replace("radius = 4", "radius = 4\nspcing = 1");
        match RunConfig::parse(&bad) {
            Err(CliError::Config { path, message }) => {
                assert_eq!(path, "grid.spcing");
                assert!(message.contains("spcing"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let bad = format!("{BASIC}[simulation]\nn_reps = \"many\"\n");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config { path, .. }) if path == "simulation.n_reps"));
        let mut empty = RunConfig::parse(&format!("{BASIC}[simulation]\nn_reps = 0\n")).unwrap();
        assert!(
            matches!(empty.resolve(), Err(CliError::Config { path, message }) if path == "simulation.n_reps" && message == "empty run")
        );
    }

    #[test]
    fn threshold_needs_bounded_model() {
        let text = BASIC.replace("kind = \"constant\"\nc = 1.0", "kind = \"brown_resnick\"")
            + "[simulation]\nmode = \"threshold\"\n";
        let mut c = RunConfig::parse(&text).unwrap();
        assert!(matches!(c.resolve(), Err(CliError::Config { path, .. }) if path == "simulation.mode"));
    }
}
