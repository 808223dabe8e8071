//! Uniform client interface for text generation and sequence scoring.
//!
//! Two capabilities are kept separate: `complete` samples continuations of
//! a prompt, `score` returns per-token log-probabilities of a fixed
//! continuation under a context. Generation-time logprobs are not enough in
//! general because selection perplexity is conditioned on the seed
//! description, which may differ from the description a code was generated
//! from.
//!
//! [`http::HttpBackend`] speaks a completions-style wire protocol;
//! [`mock::MockBackend`] is a pure deterministic stand-in for tests and
//! reproducible dry runs.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Numerical slack when validating that logprobs are nonpositive.
pub const LOGPROB_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unreachable after {attempts} attempts: {message}")]
    Network { message: String, attempts: u32 },
    #[error("protocol violation: {message}")]
    Protocol {
        message: String,
        /// Raw response body, for debugging malformed endpoints.
        raw_body: String,
    },
    #[error("backend lacks capability: {0}")]
    Capability(String),
}

/// How a completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// One sampled continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// One logprob per generated token; present when requested.
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: FinishReason,
}

/// Connection settings for an inference endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSpec {
    pub base_url: String,
    pub model: String,
    pub request_timeout_ms: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_concurrent: usize,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            request_timeout_ms: 60_000,
            max_retries: 3,
            retry_backoff_ms: 500,
            max_concurrent: 4,
        }
    }
}

impl BackendSpec {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_concurrent < 1 {
            return Err(BackendError::InvalidRequest(
                "max_concurrent must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Text generation plus sequence scoring. Implementations are shareable
/// across threads; in-flight request counts are capped internally.
pub trait Backend: Send + Sync {
    /// Sample exactly `n` continuations of `prompt`. Order is the backend's
    /// return order.
    fn complete(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        max_tokens: usize,
        want_logprobs: bool,
    ) -> Result<Vec<Completion>, BackendError>;

    /// Per-token logprobs of `continuation` given `context`, under the
    /// backend's tokenization. Each value is <= 0 up to numerical slack.
    fn score(&self, context: &str, continuation: &str) -> Result<Vec<f64>, BackendError>;

    /// Cheap reachability probe; called once before a run starts.
    fn health_check(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub(crate) fn check_generation_args(n: usize, temperature: f64) -> Result<(), BackendError> {
    if n < 1 {
        return Err(BackendError::InvalidRequest("n must be >= 1".into()));
    }
    if !(temperature > 0.0) {
        return Err(BackendError::InvalidRequest(
            "temperature must be > 0".into(),
        ));
    }
    Ok(())
}

pub(crate) fn check_score_args(continuation: &str) -> Result<(), BackendError> {
    if continuation.is_empty() {
        return Err(BackendError::InvalidRequest(
            "continuation must be nonempty".into(),
        ));
    }
    Ok(())
}

/// Reject any logprob that is positive beyond slack or non-finite.
pub fn validate_logprobs(logprobs: &[f64], raw_body: &str) -> Result<(), BackendError> {
    for &value in logprobs {
        if value > LOGPROB_SLACK || !value.is_finite() {
            return Err(BackendError::Protocol {
                message: format!("logprob {value} is positive beyond slack"),
                raw_body: raw_body.to_string(),
            });
        }
    }
    Ok(())
}
