//! Run manifests: every command records its configuration, seeds, input
//! digests, and outputs, so a run can be reproduced from the manifest alone.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::util::{runtime, sha256_file, CliError};

#[derive(Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub created_unix: u64,
}

pub struct ManifestBuilder {
    command: String,
    config: Value,
    seed: u64,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest JSON and returns its path.
    pub fn write(self, manifest_path: &Path) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let raw = serde_json::to_vec_pretty(&manifest).expect("serializable");
        std::fs::write(manifest_path, raw)
            .map_err(|e| runtime(format!("cannot write {}: {e}", manifest_path.display())))?;
        Ok(manifest_path.to_path_buf())
    }
}

/// Manifest path for a single-file output: `<out>.manifest.json`.
pub fn manifest_path_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
