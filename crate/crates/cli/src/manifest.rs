//! Run manifests: config snapshot, per-check pass/fail with measured
//! values, and a checksummed list of every emitted file.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    /// "<=" or ">=" (measured vs threshold).
    pub cmp: String,
    pub pass: bool,
}

impl CheckResult {
    pub fn le(name: &str, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold,
            cmp: "<=".into(),
            pass: measured <= threshold,
        }
    }

    pub fn ge(name: &str, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold,
            cmp: ">=".into(),
            pass: measured >= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub wall_seconds: f64,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub files: Vec<FileEntry>,
    pub config: toml::Value,
    /// Free-form measured quantities worth keeping with the run.
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn new(experiment: &str, config: toml::Value) -> Self {
        Self {
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_seconds: 0.0,
            pass: true,
            checks: Vec::new(),
            files: Vec::new(),
            config,
            extra: serde_json::Value::Null,
        }
    }

    pub fn push_check(&mut self, check: CheckResult) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    /// Checksum every regular file in `dir` (except the manifest itself)
    /// and write `manifest.json`.
    pub fn finalize(mut self, dir: &Path, wall_seconds: f64) -> Result<Self> {
        self.wall_seconds = wall_seconds;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.json"))
            .collect();
        paths.sort();
        self.files = paths
            .iter()
            .map(|p| {
                let bytes = fs::read(p)?;
                let mut hasher = Sha256::new();
                hasher.update(&bytes);
                Ok(FileEntry {
                    path: p
                        .file_name()
                        .unwrap()
                        .to_string_lossy()
                        .into_owned(),
                    sha256: format!("{:x}", hasher.finalize()),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<_>>()?;
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(self)
    }
}
