//! Library side of the `maxstab` command: config loading, run manifests and
//! the subcommands themselves, so tests can drive them in-process.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use error::{CliError, Result};

/// Overrides given on the command line, applied before defaults are filled.
/// `out` only picks the directory and is not part of the config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub reps: Option<usize>,
}

/// Read, override and resolve a config file. `--reps` sets the path count
/// for `diagnose` and the replication count otherwise.
pub fn load_config(path: &Path, ov: &Overrides, diagnose: bool) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|_| CliError::Missing(path.to_path_buf()))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = ov.seed {
        cfg.seed = Some(s);
    }
    if let Some(n) = ov.reps {
        if diagnose {
            cfg.diagnostics.n_paths = n;
        } else {
            cfg.simulation.n_reps = n;
        }
    }
    cfg.resolve()?;
    Ok(cfg)
}

pub fn out_dir(cfg: Option<&RunConfig>, ov: &Overrides) -> Result<PathBuf> {
    ov.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .ok_or_else(|| CliError::Usage("no output directory; pass --out or set `out` in the config".into()))
}
