//! Chat-completion clients. The sampler only sees [`ChatClient`]; the live
//! HTTP implementation and the replay stub are interchangeable behind it.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::cache::prompt_hash;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct TransportError(pub String);

/// One completion request. `sample_index` identifies which of the repeated
/// draws this is; live providers ignore it, the replay stub keys on it.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: Option<f64>,
    pub sample_index: usize,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError>;
}

/// Wire settings of an OpenAI-style chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderProfile {
    pub endpoint: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Prefixed to the key in the auth header value.
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    /// Model string sent on the wire, when it differs from the profile name.
    #[serde(default)]
    pub api_model: Option<String>,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_prefix() -> String {
    "Bearer ".into()
}

/// Blocking HTTP client for a chat-completion endpoint.
pub struct HttpChatClient {
    agent: ureq::Agent,
    profile: ProviderProfile,
    api_key: String,
}

impl HttpChatClient {
    pub fn new(profile: ProviderProfile, api_key: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent, profile, api_key }
    }

    fn request_body(&self, request: &ChatRequest<'_>) -> Value {
        let model = self.profile.api_model.as_deref().unwrap_or(request.model);
        let mut body = json!({
            "model": model,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

/// Pulls the assistant text out of a chat-completion response.
pub fn extract_completion_text(response: &Value) -> Result<String, TransportError> {
    response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError(format!("response has no choices[0].message.content: {response}")))
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let auth = format!("{}{}", self.profile.auth_prefix, self.api_key);
        let mut response = self
            .agent
            .post(&self.profile.endpoint)
            .header(self.profile.auth_header.as_str(), auth.as_str())
            .send_json(self.request_body(request))
            .map_err(|e| TransportError(format!("{}: {e}", self.profile.endpoint)))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| TransportError(format!("bad response body: {e}")))?;
        extract_completion_text(&value)
    }
}

/// Recorded responses for one (model, prompt) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayEntry {
    pub model: String,
    pub prompt_hash: String,
    /// Response for sample index `i` is `responses[i]`.
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFixture {
    pub entries: Vec<ReplayEntry>,
}

impl ReplayFixture {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn push(&mut self, model: &str, prompt: &str, responses: Vec<String>) {
        self.entries.push(ReplayEntry {
            model: model.to_string(),
            prompt_hash: prompt_hash(prompt),
            responses,
        });
    }
}

/// Deterministic stub serving recorded responses by (model, prompt, index).
pub struct ReplayClient {
    entries: BTreeMap<(String, String), Vec<String>>,
}

impl ReplayClient {
    pub fn new(fixture: ReplayFixture) -> Self {
        let mut entries: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for e in fixture.entries {
            entries.entry((e.model, e.prompt_hash)).or_default().extend(e.responses);
        }
        Self { entries }
    }

    /// A stub with no recordings; every request fails. Used offline when only
    /// the cache is expected to answer.
    pub fn empty() -> Self {
        Self::new(ReplayFixture::default())
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let hash = prompt_hash(request.prompt);
        let responses = self
            .entries
            .get(&(request.model.to_string(), hash.clone()))
            .ok_or_else(|| TransportError(format!("no replay recording for model {} prompt {hash}", request.model)))?;
        responses.get(request.sample_index).cloned().ok_or_else(|| {
            TransportError(format!(
                "replay recording for model {} prompt {hash} has {} responses, sample {} requested",
                request.model,
                responses.len(),
                request.sample_index
            ))
        })
    }
}

/// Wraps a client and counts the requests that reach it.
pub struct CountingClient<C> {
    inner: C,
    calls: AtomicUsize,
}

impl<C: ChatClient> CountingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: ChatClient> ChatClient for CountingClient<C> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}
