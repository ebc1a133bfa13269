//! Uniform client for chat-completion LLM endpoints.
//!
//! A [`Backend`] produces one [`Completion`] per [`ChatRequest`]. Two
//! implementations ship here: [`HttpBackend`] speaking the de-facto
//! chat-completions wire shape, and [`MockBackend`] replaying a script
//! keyed on stage tags. [`Client`] wraps a backend with a retry policy
//! and an optional persistent [`ResponseCache`] so that a warm cache
//! replays a whole run without any network traffic.

mod cache;
mod client;
mod http;
mod mock;

pub use cache::ResponseCache;
pub use client::{CallOutcome, Client, Sleeper, SystemSleeper};
pub use http::HttpBackend;
pub use mock::{FailKind, MockBackend, MockScript, ScriptEntry};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Duration;

/// Sampling parameters sent with every request.
///
/// `seed` distinguishes otherwise-identical sampled calls (the
/// self-consistency paths); servers that support it also gain per-path
/// reproducibility. It participates in [`cache_key`] like every other
/// parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceParams {
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

/// Message role in a chat exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A single chat-completion request.
///
/// `stage_tag` identifies the pipeline stage and expert index (for mock
/// routing and tracing). It never participates in [`cache_key`], so
/// orchestration refactors do not invalidate caches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub params: InferenceParams,
    pub stage_tag: String,
}

impl ChatRequest {
    /// Single-user-message request with the given stage tag.
    pub fn user(
        model_id: impl Into<String>,
        stage_tag: impl Into<String>,
        content: impl Into<String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            messages: vec![Message::user(content)],
            params: InferenceParams::default(),
            stage_tag: stage_tag.into(),
        }
    }

    /// Concatenated text of all messages, used by mock matchers and audits.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest(
                "messages must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Why the backend stopped generating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    /// Output hit the token budget; the text may be truncated and
    /// downstream parsers must tolerate this.
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One completion returned by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
}

impl Completion {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            token_usage: None,
        }
    }
}

/// Retry policy: `max_attempts` is the total number of tries (>= 1);
/// `backoff` is the sleep schedule before retry n (the last entry repeats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff: Vec<Duration>,
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based). Empty schedule means no sleep.
    pub fn delay_before_retry(&self, retry: u32) -> Option<Duration> {
        if self.backoff.is_empty() {
            return None;
        }
        let idx = (retry as usize - 1).min(self.backoff.len() - 1);
        Some(self.backoff[idx])
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_millis(1000),
                Duration::from_millis(2000),
            ],
        }
    }
}

/// Backend connection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_id: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Directory for the persistent response cache; `None` disables caching.
    pub cache_path: Option<std::path::PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_id: "llama3.1:70b".into(),
            // The per-call timeout is an artifact default, not a reported value.
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            cache_path: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.retry.max_attempts < 1 {
            return Err(BackendError::InvalidRequest(
                "retry.max_attempts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Errors surfaced by backends and the retrying client.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("network error after {attempts} attempt(s): {last}")]
    Network { attempts: u32, last: String },
    #[error("request timed out after {attempts} attempt(s): {last}")]
    Timeout { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend refused the request{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Refusal {
        status: Option<u16>,
        message: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Transient failures are retried; the rest abort immediately.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Network { .. } | BackendError::Timeout { .. }
        )
    }

    /// Short machine-readable class for failure records.
    pub fn class(&self) -> &'static str {
        match self {
            BackendError::Network { .. } => "backend:network",
            BackendError::Timeout { .. } => "backend:timeout",
            BackendError::MalformedResponse(_) => "backend:malformed_response",
            BackendError::Refusal { .. } => "backend:refusal",
            BackendError::InvalidRequest(_) => "backend:invalid_request",
        }
    }
}

/// A backend turns one request into one completion. Implementations must
/// be safe to call from many worker threads at once.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;
}

/// Canonical material hashed by [`cache_key`]. Field order is part of the
/// format; `stage_tag` is deliberately absent.
#[derive(Serialize)]
struct CacheKeyMaterial<'a> {
    model_id: &'a str,
    messages: &'a [Message],
    temperature: f64,
    top_p: f64,
    frequency_penalty: f64,
    presence_penalty: f64,
    max_tokens: u32,
    seed: Option<u64>,
}

/// Deterministic digest over (model id, ordered messages, all sampling
/// params). Equal inputs give equal digests across processes and platforms.
pub fn cache_key(request: &ChatRequest) -> String {
    let material = CacheKeyMaterial {
        model_id: &request.model_id,
        messages: &request.messages,
        temperature: request.params.temperature,
        top_p: request.params.top_p,
        frequency_penalty: request.params.frequency_penalty,
        presence_penalty: request.params.presence_penalty,
        max_tokens: request.params.max_tokens,
        seed: request.params.seed,
    };
    let bytes = serde_json::to_vec(&material).expect("cache key material serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(tag: &str) -> ChatRequest {
        ChatRequest::user("m", tag, "hello")
    }

    #[test]
    fn default_params_match_contract() {
        let p = InferenceParams::default();
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.frequency_penalty, 0.0);
        assert_eq!(p.presence_penalty, 0.0);
        assert_eq!(p.top_p, 1.0);
    }

    #[test]
    fn cache_key_is_deterministic() {
        assert_eq!(cache_key(&req("a")), cache_key(&req("a")));
    }

    #[test]
    fn cache_key_ignores_stage_tag() {
        assert_eq!(cache_key(&req("vote/qe1")), cache_key(&req("dm")));
    }

    #[test]
    fn cache_key_sensitive_to_temperature() {
        let a = req("t");
        let mut b = req("t");
        b.params.temperature = 0.7;
        assert_ne!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn cache_key_sensitive_to_seed() {
        let a = req("t");
        let mut b = req("t");
        b.params.seed = Some(1);
        let mut c = req("t");
        c.params.seed = Some(2);
        assert_ne!(cache_key(&a), cache_key(&b));
        assert_ne!(cache_key(&b), cache_key(&c));
    }

    #[test]
    fn cache_key_sensitive_to_message_order() {
        let mut a = req("t");
        a.messages = vec![Message::user("one"), Message::user("two")];
        let mut b = req("t");
        b.messages = vec![Message::user("two"), Message::user("one")];
        assert_ne!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn empty_messages_rejected() {
        let mut r = req("t");
        r.messages.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn retry_backoff_schedule_clamps_to_last() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_before_retry(1), Some(Duration::from_millis(500)));
        assert_eq!(p.delay_before_retry(3), Some(Duration::from_millis(2000)));
        assert_eq!(p.delay_before_retry(9), Some(Duration::from_millis(2000)));
    }
}
