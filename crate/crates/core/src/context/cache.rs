//! On-disk sample cache: one JSON file per draw at
//! `<root>/<model>/<prompt_hash>/<index>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::parse::parse_llm_distribution;
use crate::distributions::EmotionDistribution;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("corrupt cache entry {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("cache io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Hex SHA-256 of a rendered prompt.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Model names become directory names; anything outside `[A-Za-z0-9._-]`
/// is replaced by `_`.
pub fn model_dir_name(model: &str) -> String {
    model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// One raw model answer and what it parsed to (`None` when unparseable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSample {
    pub raw_text: String,
    pub parsed: Option<EmotionDistribution>,
    pub model_name: String,
    pub prompt_hash: String,
    pub sample_index: usize,
    /// Seconds since the Unix epoch when the answer was obtained.
    pub timestamp: u64,
}

impl LlmSample {
    pub fn new(raw_text: String, model_name: &str, prompt_hash: &str, sample_index: usize, timestamp: u64) -> Self {
        let parsed = parse_llm_distribution(&raw_text).ok();
        Self {
            raw_text,
            parsed,
            model_name: model_name.to_string(),
            prompt_hash: prompt_hash.to_string(),
            sample_index,
            timestamp,
        }
    }
}

pub struct SampleCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl SampleCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, model: &str, prompt_hash: &str, index: usize) -> PathBuf {
        self.root
            .join(model_dir_name(model))
            .join(prompt_hash)
            .join(format!("{index}.json"))
    }

    /// Cached sample for this draw, if any. Entries whose identity fields or
    /// parse result disagree with their raw text are reported as corrupt.
    pub fn load(&self, model: &str, prompt_hash: &str, index: usize) -> Result<Option<LlmSample>, CacheError> {
        let path = self.path_for(model, prompt_hash, index);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let corrupt = |reason: String| CacheError::Corrupt { path: path.clone(), reason };
        let sample: LlmSample = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if sample.model_name != model || sample.prompt_hash != prompt_hash || sample.sample_index != index {
            return Err(corrupt(format!(
                "entry is for ({}, {}, {})",
                sample.model_name, sample.prompt_hash, sample.sample_index
            )));
        }
        let reparsed = parse_llm_distribution(&sample.raw_text).ok();
        let consistent = match (&reparsed, &sample.parsed) {
            (None, None) => true,
            (Some(a), Some(b)) => a.probs().iter().zip(b.probs()).all(|(x, y)| (x - y).abs() <= 1e-12),
            _ => false,
        };
        if !consistent {
            return Err(corrupt("stored parse does not match raw_text".into()));
        }
        // The stored copy went through a JSON round trip; the fresh parse is
        // bit-identical to what a cold run computes.
        Ok(Some(LlmSample { parsed: reparsed, ..sample }))
    }

    /// Writes atomically (temp file + rename). Writes are serialized.
    pub fn store(&self, sample: &LlmSample) -> Result<(), CacheError> {
        let path = self.path_for(&sample.model_name, &sample.prompt_hash, sample.sample_index);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let io = |source| CacheError::Io { path: path.clone(), source };
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(sample).expect("sample serializes");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&body).map_err(io)?;
        f.write_all(b"\n").map_err(io)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let h = prompt_hash("p");
        let s = LlmSample::new(
            "Joy: 0.5, Neutral: 0.5, Surprise: 0, Anger: 0, Disgust: 0, Fear: 0, Sad: 0".into(),
            "gpt-4",
            &h,
            3,
            0,
        );
        assert!(s.parsed.is_some());
        cache.store(&s).unwrap();
        assert!(cache.path_for("gpt-4", &h, 3).ends_with(format!("gpt-4/{h}/3.json")));
        assert_eq!(cache.load("gpt-4", &h, 3).unwrap(), Some(s));
        assert_eq!(cache.load("gpt-4", &h, 4).unwrap(), None);
    }

    #[test]
    fn corrupt_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let h = prompt_hash("p");
        let path = cache.path_for("m", &h, 0);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(cache.load("m", &h, 0), Err(CacheError::Corrupt { .. })));

        let mut s = LlmSample::new("garbage".into(), "m", &h, 0, 0);
        s.parsed = Some(EmotionDistribution::uniform());
        fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
        assert!(matches!(cache.load("m", &h, 0), Err(CacheError::Corrupt { .. })));

        let moved = LlmSample::new("garbage".into(), "m", &h, 5, 0);
        fs::write(&path, serde_json::to_string(&moved).unwrap()).unwrap();
        assert!(matches!(cache.load("m", &h, 0), Err(CacheError::Corrupt { .. })));
    }

    #[test]
    fn model_names_are_path_safe() {
        assert_eq!(model_dir_name("meta/llama-2:70b"), "meta_llama-2_70b");
        assert_eq!(prompt_hash("abc").len(), 64);
    }
}
