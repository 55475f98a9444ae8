//! Provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the manifest's directory when possible.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock milliseconds per stage. Never part of the digest comparison.
    pub timings_ms: BTreeMap<String, u64>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn display_path(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Collects inputs, outputs and timings while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                seed,
                config,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings_ms: BTreeMap::new(),
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.manifest.timings_ms.entry(stage.to_string()).or_default() += t.elapsed().as_millis() as u64;
        out
    }

    /// Hashes every file and writes the manifest to `path`.
    pub fn write(mut self, path: &Path) -> Result<RunManifest, CliError> {
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let digest = |ps: &[PathBuf]| -> Result<Vec<FileDigest>, CliError> {
            ps.iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: display_path(p, &base),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        self.manifest.inputs = digest(&self.inputs)?;
        self.manifest.outputs = digest(&self.outputs)?;
        let text = serde_json::to_string_pretty(&self.manifest).map_err(busflux_core::Error::from)?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
        Ok(self.manifest)
    }
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text).map_err(busflux_core::Error::from)?)
    }

    /// Output paths with digests, the part that must match between reruns.
    pub fn digest_list(&self) -> Vec<(String, String)> {
        self.outputs.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect()
    }
}
