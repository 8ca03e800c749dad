use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::context::{LlmQueryConfig, ProviderProfile};
use crate::facesources::FrameKind;
use crate::fusion::{BandTable, FusionConfig};
use crate::metrics::KldDirection;

/// `context_source` value selecting the human context-only ratings.
pub const HUMAN_CONTEXT: &str = "human";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    /// Normalized product of face and context distributions.
    #[default]
    Bci,
    /// The LLM receives a prose face description and answers directly.
    LlmIntegration,
}

fn default_n_samples() -> usize {
    20
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> usize {
    3
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

/// One LLM to query. `provider` is only needed for live runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmProfile {
    pub model_name: String,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub provider: Option<ProviderProfile>,
}

impl LlmProfile {
    pub fn query_config(&self, cache_dir: &Path) -> LlmQueryConfig {
        LlmQueryConfig {
            model_name: self.model_name.clone(),
            n_samples: self.n_samples,
            temperature: self.temperature,
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            retry_backoff_ms: self.retry_backoff_ms,
            cache_dir: cache_dir.to_path_buf(),
        }
    }
}

fn default_kind() -> FrameKind {
    FrameKind::Evidence
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Pipeline configuration file. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub annotations: PathBuf,
    /// Per-frame face-model export.
    #[serde(default)]
    pub face_frames: Option<PathBuf>,
    #[serde(default = "default_kind")]
    pub face_source_kind: FrameKind,
    /// Precomputed per-video face distributions; takes precedence over frames.
    #[serde(default)]
    pub face_distributions: Option<PathBuf>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Recorded LLM answers served in offline mode.
    #[serde(default)]
    pub replay_fixtures: Option<PathBuf>,
    #[serde(default)]
    pub llm_profiles: Vec<LlmProfile>,
    /// Context channel used for fusion: a profile's model name or "human".
    /// Defaults to the first profile, or "human" when there are none.
    #[serde(default)]
    pub context_source: Option<String>,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub integration_mode: IntegrationMode,
    /// Profile used in LLM-integration mode; defaults to the first profile.
    #[serde(default)]
    pub integration_model: Option<String>,
    #[serde(default)]
    pub bands: BandTable,
    #[serde(default)]
    pub kld_direction: KldDirection,
    #[serde(default)]
    pub offline: bool,
    /// Used only by the fixture generator.
    #[serde(default)]
    pub seed: u64,
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    /// Hex SHA-256 of the config file bytes.
    pub config_hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self {
            config,
            base_dir,
            config_hash: hex::encode(Sha256::digest(&bytes)),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn from_config(config: RunConfig, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let bytes = serde_json::to_vec(&config).expect("config serializes");
        let loaded = Self {
            config,
            base_dir: base_dir.into(),
            config_hash: hex::encode(Sha256::digest(&bytes)),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(&self.config.cache_dir)
    }

    pub fn profile(&self, name: &str) -> Option<&LlmProfile> {
        self.config.llm_profiles.iter().find(|p| p.model_name == name)
    }

    /// Name of the context channel used for fusion.
    pub fn context_source(&self) -> String {
        match (&self.config.context_source, self.config.llm_profiles.first()) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => p.model_name.clone(),
            (None, None) => HUMAN_CONTEXT.to_string(),
        }
    }

    pub fn integration_profile(&self) -> Result<&LlmProfile, PipelineError> {
        match &self.config.integration_model {
            Some(name) => self
                .profile(name)
                .ok_or_else(|| PipelineError::Config(format!("integration_model {name:?} has no profile"))),
            None => self
                .config
                .llm_profiles
                .first()
                .ok_or_else(|| PipelineError::Config("llm_integration mode needs at least one llm profile".into())),
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let c = &self.config;
        c.fusion
            .validate()
            .map_err(|e| PipelineError::Config(format!("fusion: {e}")))?;
        c.bands
            .validate()
            .map_err(|e| PipelineError::Config(format!("bands: {e}")))?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &c.llm_profiles {
            if p.model_name.is_empty() || p.model_name == HUMAN_CONTEXT {
                return Err(PipelineError::Config(format!("invalid model_name {:?}", p.model_name)));
            }
            if !seen.insert(p.model_name.as_str()) {
                return Err(PipelineError::Config(format!("duplicate profile {:?}", p.model_name)));
            }
            p.query_config(Path::new("."))
                .validate()
                .map_err(|e| PipelineError::Config(format!("profile {}: {e}", p.model_name)))?;
        }
        let source = self.context_source();
        if source != HUMAN_CONTEXT && self.profile(&source).is_none() {
            return Err(PipelineError::Config(format!("context_source {source:?} has no profile")));
        }
        if c.integration_mode == IntegrationMode::LlmIntegration {
            self.integration_profile()?;
        }
        Ok(())
    }
}
