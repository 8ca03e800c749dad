use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of a run: what went in and what each stage wrote.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    /// Input path as written in the config -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Stage -> output file -> SHA-256.
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
    /// Videos whose face evidence was all non-positive.
    pub degenerate_sources: Vec<String>,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

impl RunManifest {
    /// Loads the manifest in `dir` if it belongs to the same config;
    /// otherwise starts a fresh one.
    pub fn open(dir: &Path, config_hash: &str) -> Self {
        let path = dir.join(MANIFEST_FILE);
        let existing = fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
            .filter(|m| m.config_hash == config_hash && m.tool_version == env!("CARGO_PKG_VERSION"));
        existing.unwrap_or_else(|| RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            ..Default::default()
        })
    }

    pub fn record_stage(&mut self, stage: &str, outputs: BTreeMap<String, String>) {
        self.stages.insert(stage.to_string(), outputs);
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let mut body = serde_json::to_vec_pretty(self).expect("manifest serializes");
        body.push(b'\n');
        fs::write(&path, body).map_err(|e| PipelineError::io(&path, e))
    }
}
