//! Situational-context distributions P(e|c) from an LLM.
//!
//! A prompt describing the game and its outcome is sent `n_samples` times;
//! every answer is parsed into a distribution and the parsed answers are
//! averaged. Each draw is cached on disk under its own index so reruns are
//! free and reproducible. Unparseable answers are skipped and replaced by a
//! fresh draw, as long as they stay within a 20% budget.

pub mod cache;
pub mod client;
pub mod parse;
pub mod prompt;

use std::path::PathBuf;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::GameOutcome;
use crate::distributions::EmotionDistribution;
use crate::fusion::{BandTable, FusionError};

pub use cache::{prompt_hash, CacheError, LlmSample, SampleCache};
pub use client::{
    ChatClient, ChatRequest, CountingClient, HttpChatClient, ProviderProfile, ReplayClient, ReplayEntry,
    ReplayFixture, TransportError,
};
pub use parse::{format_answer, parse_llm_distribution, ParseError};
pub use prompt::{build_integration_prompt, build_prompt, PromptSpec};

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("model {model}: request failed after {attempts} attempts: {last}")]
    TransportError {
        model: String,
        attempts: usize,
        last: TransportError,
    },
    #[error("model {model}: {failures} unparseable answers exceed the budget for {n_samples} samples")]
    TooManyParseFailures {
        model: String,
        failures: usize,
        n_samples: usize,
    },
    #[error(transparent)]
    CacheCorrupt(#[from] CacheError),
    #[error("invalid query configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prompt(#[from] FusionError),
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

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

/// How to query one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmQueryConfig {
    pub model_name: String,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// `None` leaves the provider default in place.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Pause before the first retry, doubled on each further attempt.
    #[serde(default)]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
}

impl LlmQueryConfig {
    pub fn new(model_name: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            model_name: model_name.into(),
            n_samples: default_n_samples(),
            temperature: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            retry_backoff_ms: 0,
            cache_dir: cache_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        if self.n_samples == 0 {
            return Err(ContextError::InvalidConfig("n_samples must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ContextError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(ContextError::InvalidConfig("model_name is empty".into()));
        }
        Ok(())
    }

    /// Unparseable answers tolerated before giving up: 20% of `n_samples`.
    pub fn parse_failure_budget(&self) -> usize {
        self.n_samples / 5
    }
}

/// Averaged distribution plus the samples that went into it.
#[derive(Debug, Clone)]
pub struct QueryResult {
    pub distribution: EmotionDistribution,
    /// Parsed samples used in the mean, in index order.
    pub samples: Vec<LlmSample>,
    /// Unparseable samples that were skipped.
    pub rejected: Vec<LlmSample>,
    /// Requests that went to the client (cache misses, including retries).
    pub client_calls: usize,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Cache-first fetch of one draw, retrying transport failures.
fn fetch_sample(
    prompt: &str,
    hash: &str,
    index: usize,
    cfg: &LlmQueryConfig,
    client: &dyn ChatClient,
    cache: &SampleCache,
) -> Result<(LlmSample, usize), ContextError> {
    if let Some(s) = cache.load(&cfg.model_name, hash, index)? {
        return Ok((s, 0));
    }
    let request = ChatRequest {
        model: &cfg.model_name,
        prompt,
        temperature: cfg.temperature,
        sample_index: index,
    };
    let attempts = cfg.max_retries + 1;
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 && cfg.retry_backoff_ms > 0 {
            let backoff = cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        match client.complete(&request) {
            Ok(raw) => {
                let sample = LlmSample::new(raw, &cfg.model_name, hash, index, now_secs());
                cache.store(&sample)?;
                return Ok((sample, attempt + 1));
            }
            Err(e) => {
                log::warn!("{} sample {index}: attempt {} failed: {e}", cfg.model_name, attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(ContextError::TransportError {
        model: cfg.model_name.clone(),
        attempts,
        last: last.expect("at least one attempt"),
    })
}

/// Fetches a batch of indices with at most `max_in_flight` concurrent
/// requests. Results come back in index order.
fn fetch_batch(
    prompt: &str,
    hash: &str,
    indices: std::ops::Range<usize>,
    cfg: &LlmQueryConfig,
    client: &dyn ChatClient,
    cache: &SampleCache,
) -> Result<Vec<(LlmSample, usize)>, ContextError> {
    let indices: Vec<usize> = indices.collect();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(cfg.max_in_flight) {
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| scope.spawn(move || fetch_sample(prompt, hash, i, cfg, client, cache)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sample fetch panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Sends `prompt` until `n_samples` answers parse, then averages them.
pub fn query_distribution(
    prompt: &str,
    cfg: &LlmQueryConfig,
    client: &dyn ChatClient,
) -> Result<QueryResult, ContextError> {
    cfg.validate()?;
    let cache = SampleCache::new(&cfg.cache_dir);
    let hash = prompt_hash(prompt);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut rejected = Vec::new();
    let mut client_calls = 0;
    let mut next_index = 0;
    while samples.len() < cfg.n_samples {
        let needed = cfg.n_samples - samples.len();
        let batch = fetch_batch(prompt, &hash, next_index..next_index + needed, cfg, client, &cache)?;
        next_index += needed;
        for (sample, calls) in batch {
            client_calls += calls;
            if sample.parsed.is_some() {
                samples.push(sample);
            } else {
                log::warn!(
                    "{} sample {} unparseable: {:?}",
                    cfg.model_name,
                    sample.sample_index,
                    sample.raw_text
                );
                rejected.push(sample);
                if rejected.len() > cfg.parse_failure_budget() {
                    return Err(ContextError::TooManyParseFailures {
                        model: cfg.model_name.clone(),
                        failures: rejected.len(),
                        n_samples: cfg.n_samples,
                    });
                }
            }
        }
    }
    let distribution = EmotionDistribution::mean(samples.iter().filter_map(|s| s.parsed.as_ref()))
        .expect("n_samples >= 1 parsed samples");
    Ok(QueryResult {
        distribution,
        samples,
        rejected,
        client_calls,
    })
}

/// P(e|c) for one game outcome.
pub fn query_context_distribution(
    outcome: GameOutcome,
    cfg: &LlmQueryConfig,
    client: &dyn ChatClient,
) -> Result<QueryResult, ContextError> {
    query_distribution(&build_prompt(outcome), cfg, client)
}

/// P(e|c,f) with the LLM doing the integration, given a face distribution.
pub fn query_integrated_distribution(
    outcome: GameOutcome,
    face: &EmotionDistribution,
    bands: &BandTable,
    cfg: &LlmQueryConfig,
    client: &dyn ChatClient,
) -> Result<QueryResult, ContextError> {
    let prompt = build_integration_prompt(outcome, face, bands)?;
    query_distribution(&prompt, cfg, client)
}
