//! Run manifests and content hashes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vcm_core::data::DATASET_FILES;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every command-line argument that was given, by name.
    pub arguments: serde_json::Value,
    /// Effective configuration (defaults filled in).
    pub config: serde_json::Value,
    /// SHA-256 of the input dataset (processed directory or raw files).
    pub dataset_sha256: String,
    pub seed: Option<u64>,
    pub code_version: String,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
}

impl RunManifest {
    pub fn new(command: &str, arguments: serde_json::Value, config: serde_json::Value, threads: usize) -> Self {
        RunManifest {
            command: command.into(),
            arguments,
            config,
            dataset_sha256: String::new(),
            seed: None,
            code_version: env!("CARGO_PKG_VERSION").into(),
            threads,
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(&mut self, dir: &Path, status: &str) -> Result<()> {
        self.finished_unix = Some(now());
        self.status = status.into();
        self.write(dir)
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of named files, each contributing its name and contents.
pub fn hash_files(files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = std::fs::read(f).with_context(|| format!("reading {}", f.display()))?;
        h.update(
            f.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
                .as_bytes(),
        );
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn hash_dataset_dir(dir: &Path) -> Result<String> {
    let files: Vec<PathBuf> = DATASET_FILES.iter().map(|f| dir.join(f)).collect();
    hash_files(&files)
}
