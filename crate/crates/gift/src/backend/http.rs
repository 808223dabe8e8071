//! HTTP backend speaking a completions-style wire protocol.
//!
//! Generation is one POST to `{base_url}/completions` with body
//!
//! ```json
//! {"model": "...", "prompt": "...", "n": 3, "temperature": 1.0,
//!  "max_tokens": 512, "logprobs": 0, "echo": false}
//! ```
//!
//! (`logprobs` omitted when logprobs are not wanted). The response must
//! carry exactly `n` choices, each `{"text", "finish_reason", "logprobs"}`
//! where `logprobs` is `{"tokens", "token_logprobs", "text_offset"}` with
//! one entry per generated token.
//!
//! Scoring reuses the same endpoint: the request sets `prompt` to
//! `context + continuation`, `echo: true`, `max_tokens: 0`, `logprobs: 0`,
//! and the client reads the echoed span whose `text_offset` is at or past
//! the byte length of `context`. `text_offset` values are byte offsets into
//! the echoed prompt. An endpoint that cannot echo logprobs (non-200 on
//! such requests, or a missing `logprobs` block) surfaces as a capability
//! error so callers can fall back.
//!
//! Transient failures (transport errors, 429, 5xx) are retried with
//! exponential backoff up to `max_retries`; each logical request yields at
//! most one accepted response. Concurrency is capped by `max_concurrent`.
//! The `GIFT_API_KEY` environment variable, when set, is sent as a bearer
//! token.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    check_generation_args, check_score_args, validate_logprobs, Backend, BackendError,
    BackendSpec, Completion, FinishReason,
};
use crate::sem::Semaphore;

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    n: usize,
    temperature: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    echo: bool,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    tokens: Vec<String>,
    /// `null` entries are legal only for echoed context-free positions.
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

fn protocol(message: impl Into<String>, raw_body: &str) -> BackendError {
    BackendError::Protocol {
        message: message.into(),
        raw_body: raw_body.to_string(),
    }
}

/// Parse a generation response body. Pure; fuzzed directly.
pub fn parse_completions_body(
    body: &str,
    expected_n: usize,
    want_logprobs: bool,
) -> Result<Vec<Completion>, BackendError> {
    let response: WireResponse =
        serde_json::from_str(body).map_err(|e| protocol(format!("bad JSON: {e}"), body))?;
    if response.choices.len() != expected_n {
        return Err(protocol(
            format!(
                "requested {expected_n} choices, endpoint returned {}",
                response.choices.len()
            ),
            body,
        ));
    }
    let mut completions = Vec::with_capacity(expected_n);
    for choice in response.choices {
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Error,
        };
        let token_logprobs = if want_logprobs {
            let block = choice
                .logprobs
                .ok_or_else(|| protocol("logprobs requested but missing from choice", body))?;
            if block.tokens.len() != block.token_logprobs.len() {
                return Err(protocol(
                    format!(
                        "token count {} does not match logprob count {}",
                        block.tokens.len(),
                        block.token_logprobs.len()
                    ),
                    body,
                ));
            }
            let values: Vec<f64> = block
                .token_logprobs
                .iter()
                .map(|v| v.ok_or_else(|| protocol("null logprob for generated token", body)))
                .collect::<Result<_, _>>()?;
            validate_logprobs(&values, body)?;
            Some(values)
        } else {
            None
        };
        completions.push(Completion {
            text: choice.text,
            token_logprobs,
            finish_reason,
        });
    }
    Ok(completions)
}

/// Parse a scoring (echo) response body, keeping only the logprobs of the
/// continuation span that starts at byte `context_len` of the echoed
/// prompt. Pure; fuzzed directly.
pub fn parse_score_body(body: &str, context_len: usize) -> Result<Vec<f64>, BackendError> {
    let response: WireResponse =
        serde_json::from_str(body).map_err(|e| protocol(format!("bad JSON: {e}"), body))?;
    if response.choices.len() != 1 {
        return Err(protocol(
            format!("expected 1 choice, got {}", response.choices.len()),
            body,
        ));
    }
    let choice = &response.choices[0];
    let block = choice.logprobs.as_ref().ok_or_else(|| {
        BackendError::Capability(
            "endpoint returned no logprobs for an echo request; scoring unsupported".into(),
        )
    })?;
    if block.text_offset.len() != block.token_logprobs.len() {
        return Err(protocol(
            format!(
                "text_offset count {} does not match logprob count {}",
                block.text_offset.len(),
                block.token_logprobs.len()
            ),
            body,
        ));
    }
    let mut values = Vec::new();
    for (offset, logprob) in block.text_offset.iter().zip(block.token_logprobs.iter()) {
        if *offset < context_len {
            continue;
        }
        let value =
            logprob.ok_or_else(|| protocol("null logprob inside continuation span", body))?;
        values.push(value);
    }
    if values.is_empty() {
        return Err(protocol(
            "no tokens found in continuation span; check tokenizer alignment",
            body,
        ));
    }
    validate_logprobs(&values, body)?;
    Ok(values)
}

pub struct HttpBackend {
    spec: BackendSpec,
    client: reqwest::blocking::Client,
    gate: Semaphore,
    bearer: Option<String>,
}

impl HttpBackend {
    pub fn new(spec: BackendSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(spec.request_timeout_ms))
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("client build failed: {e}")))?;
        let gate = Semaphore::new(spec.max_concurrent);
        let bearer = std::env::var("GIFT_API_KEY").ok().filter(|k| !k.is_empty());
        Ok(HttpBackend {
            spec,
            client,
            gate,
            bearer,
        })
    }

    fn completions_url(&self) -> String {
        format!("{}/completions", self.spec.base_url.trim_end_matches('/'))
    }

    /// POST with retry on transport errors and retryable statuses. Returns
    /// the raw body of the first accepted response.
    fn post_with_retry(&self, request: &WireRequest<'_>) -> Result<String, BackendError> {
        let _permit = self.gate.acquire();
        let url = self.completions_url();
        let mut last_error = String::new();
        let mut attempts = 0u32;
        while attempts <= self.spec.max_retries {
            if attempts > 0 {
                let backoff = self.spec.retry_backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            attempts += 1;
            let mut builder = self.client.post(&url).json(request);
            if let Some(token) = &self.bearer {
                builder = builder.bearer_auth(token);
            }
            match builder.send() {
                Ok(response) => {
                    let status = response.status();
                    let body = response.text().unwrap_or_default();
                    if status.is_success() {
                        return Ok(body);
                    }
                    if status.is_server_error() || status.as_u16() == 429 {
                        last_error = format!("status {status}");
                        continue;
                    }
                    // Non-retryable client error.
                    return Err(protocol(format!("status {status}"), &body));
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(BackendError::Network {
            message: last_error,
            attempts,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        max_tokens: usize,
        want_logprobs: bool,
    ) -> Result<Vec<Completion>, BackendError> {
        check_generation_args(n, temperature)?;
        let request = WireRequest {
            model: &self.spec.model,
            prompt,
            n,
            temperature,
            max_tokens,
            logprobs: want_logprobs.then_some(0),
            echo: false,
        };
        let body = self.post_with_retry(&request)?;
        parse_completions_body(&body, n, want_logprobs)
    }

    fn score(&self, context: &str, continuation: &str) -> Result<Vec<f64>, BackendError> {
        check_score_args(continuation)?;
        let prompt = format!("{context}{continuation}");
        let request = WireRequest {
            model: &self.spec.model,
            prompt: &prompt,
            n: 1,
            temperature: 1.0,
            max_tokens: 0,
            logprobs: Some(0),
            echo: true,
        };
        match self.post_with_retry(&request) {
            Ok(body) => parse_score_body(&body, context.len()),
            // An endpoint that rejects echo requests outright lacks the
            // scoring capability; transient network failures stay network
            // errors.
            Err(BackendError::Protocol { message, raw_body }) => Err(BackendError::Capability(
                format!("echo scoring rejected: {message}; body: {raw_body}"),
            )),
            Err(other) => Err(other),
        }
    }

    fn health_check(&self) -> Result<(), BackendError> {
        let url = format!("{}/models", self.spec.base_url.trim_end_matches('/'));
        let mut builder = self.client.get(&url);
        if let Some(token) = &self.bearer {
            builder = builder.bearer_auth(token);
        }
        // Any HTTP response counts as reachable; only transport failures do
        // not.
        builder.send().map(|_| ()).map_err(|e| BackendError::Network {
            message: e.to_string(),
            attempts: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completions_body_happy_path() {
        let body = r#"{"choices":[
            {"text":" one","finish_reason":"stop","logprobs":{"tokens":[" one"],"token_logprobs":[-0.5],"text_offset":[10]}},
            {"text":" two","finish_reason":"length","logprobs":{"tokens":[" two"],"token_logprobs":[-0.25],"text_offset":[10]}}
        ]}"#;
        let completions = parse_completions_body(body, 2, true).unwrap();
        assert_eq!(completions[0].text, " one");
        assert_eq!(completions[0].finish_reason, FinishReason::Stop);
        assert_eq!(completions[1].finish_reason, FinishReason::Length);
        assert_eq!(completions[0].token_logprobs.as_deref(), Some(&[-0.5][..]));
    }

    #[test]
    fn wrong_choice_count_is_protocol_error() {
        let body = r#"{"choices":[{"text":"only","finish_reason":"stop"}]}"#;
        let err = parse_completions_body(body, 3, false).unwrap_err();
        match err {
            BackendError::Protocol { message, raw_body } => {
                assert!(message.contains("requested 3"));
                assert!(raw_body.contains("only"));
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn positive_logprob_rejected() {
        let body = r#"{"choices":[{"text":"x","finish_reason":"stop","logprobs":{"tokens":["x"],"token_logprobs":[0.3],"text_offset":[0]}}]}"#;
        assert!(matches!(
            parse_completions_body(body, 1, true),
            Err(BackendError::Protocol { .. })
        ));
    }

    #[test]
    fn token_and_logprob_count_mismatch_rejected() {
        let body = r#"{"choices":[{"text":"x","finish_reason":"stop","logprobs":{"tokens":["a","b"],"token_logprobs":[-0.1],"text_offset":[0,1]}}]}"#;
        assert!(matches!(
            parse_completions_body(body, 1, true),
            Err(BackendError::Protocol { .. })
        ));
    }

    #[test]
    fn score_body_reads_continuation_span_only() {
        // Context is 10 bytes; first two tokens belong to it.
        let body = r#"{"choices":[{"text":"ctx ctx tail","finish_reason":"stop","logprobs":{
            "tokens":["ctx","ctx","ta","il"],
            "token_logprobs":[null,-0.9,-0.5,-0.25],
            "text_offset":[0,4,10,12]
        }}]}"#;
        let values = parse_score_body(body, 10).unwrap();
        assert_eq!(values, vec![-0.5, -0.25]);
    }

    #[test]
    fn score_body_without_logprobs_is_capability_error() {
        let body = r#"{"choices":[{"text":"x","finish_reason":"stop"}]}"#;
        assert!(matches!(
            parse_score_body(body, 0),
            Err(BackendError::Capability(_))
        ));
    }

    #[test]
    fn score_body_null_in_span_rejected() {
        let body = r#"{"choices":[{"text":"x","finish_reason":"stop","logprobs":{
            "tokens":["x"],"token_logprobs":[null],"text_offset":[5]
        }}]}"#;
        assert!(matches!(
            parse_score_body(body, 0),
            Err(BackendError::Protocol { .. })
        ));
    }
}
