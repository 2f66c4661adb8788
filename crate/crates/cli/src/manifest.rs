//! Run manifests and the single writer every output goes through.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    /// Every simulated field was exact (threshold stopping).
    pub exact: Option<bool>,
    /// Some atom log overflowed its cap.
    pub atoms_dropped: bool,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
    pub files: Vec<FileEntry>,
    /// Input files read by the stage, with their digests.
    pub inputs: Vec<FileEntry>,
    pub flags: Flags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub config_hash: Option<String>,
    pub config: Option<RunConfig>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: Option<&RunConfig>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.map(RunConfig::digest),
            config: config.cloned(),
            stages: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let p = dir.join(MANIFEST);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(CliError::io(format!("reading {}", p.display())))?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    }

    /// Replace or append the record of `stage`.
    pub fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.stage != rec.stage);
        self.stages.push(rec);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST);
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        fs::write(&p, json).map_err(CliError::io(format!("writing {}", p.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(dir: &Path, rel: &str) -> Result<FileEntry> {
    let p = dir.join(rel);
    let bytes = fs::read(&p).map_err(|_| CliError::Missing(p.clone()))?;
    Ok(FileEntry { path: rel.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}

/// Writes the files of one stage and records their digests.
pub struct StageWriter {
    dir: PathBuf,
    manifest: RunManifest,
    stage: String,
    started: SystemTime,
    clock: Instant,
    files: Vec<FileEntry>,
    pub inputs: Vec<FileEntry>,
    pub flags: Flags,
}

impl StageWriter {
    /// A manifest left in `dir` by a different config is refused rather than
    /// mixed with.
    pub fn new(dir: &Path, stage: &str, config: Option<&RunConfig>) -> Result<Self> {
        let manifest = match RunManifest::load(dir)? {
            Some(m) if m.config_hash == config.map(RunConfig::digest) => m,
            Some(_) => {
                return Err(CliError::Data(format!(
                    "{} holds a run of a different config; use a fresh --out directory",
                    dir.display()
                )))
            }
            None => RunManifest::new(config),
        };
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            stage: stage.to_string(),
            started: SystemTime::now(),
            clock: Instant::now(),
            files: Vec::new(),
            inputs: Vec::new(),
            flags: Flags::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(format!("creating {}", parent.display())))?;
        }
        fs::write(&p, bytes).map_err(CliError::io(format!("writing {}", p.display())))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> maxstab::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Record the stage in the directory's manifest.
    pub fn finish(self) -> Result<StageRecord> {
        let mut manifest = self.manifest;
        let rec = StageRecord {
            stage: self.stage,
            started_unix_s: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
            files: self.files,
            inputs: self.inputs,
            flags: self.flags,
        };
        manifest.record(rec.clone());
        manifest.save(&self.dir)?;
        Ok(rec)
    }
}
