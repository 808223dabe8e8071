//! Run configuration: loading, defaults, and validation.
//!
//! The config file is TOML. Every field has a default matching the
//! reference operating point (20 rounds of width 3, K = 8, weight
//! temperature 2.0, generation temperature 1.0), so an empty file is a
//! valid configuration. Unknown keys warn instead of erroring, to stay
//! forward compatible. Validation collects every violation with its field
//! path rather than stopping at the first.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::http::HttpBackend;
use crate::backend::mock::{MockBackend, MockConfig, ScoreMode};
use crate::backend::{Backend, BackendError, BackendSpec};
use crate::model::PairingMode;
use crate::sandbox::{Sandbox, SandboxError, SandboxLimits};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  {}: {}", v.field, v.message))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockScoreModeSetting {
    Uniform,
    TokenHash,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub seed_pass_rate: f64,
    pub derived_pass_rate: f64,
    pub score_mode: MockScoreModeSetting,
    pub uniform_token_probability: f64,
}

impl Default for MockSettings {
    fn default() -> Self {
        MockSettings {
            seed_pass_rate: 0.85,
            derived_pass_rate: 0.35,
            score_mode: MockScoreModeSetting::TokenHash,
            uniform_token_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub request_timeout_ms: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_concurrent: usize,
    /// Optional distinct endpoint for perplexity scoring; generation and
    /// scoring default to the same one.
    pub scoring_base_url: Option<String>,
    pub scoring_model: Option<String>,
    pub mock: MockSettings,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            kind: BackendKind::Mock,
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            request_timeout_ms: 60_000,
            max_retries: 3,
            retry_backoff_ms: 500,
            max_concurrent: 4,
            scoring_base_url: None,
            scoring_model: None,
            mock: MockSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxSettings {
    pub python: String,
    pub wall_timeout_ms: u64,
    pub memory_bytes: u64,
    pub output_cap_bytes: usize,
    pub deny_network: bool,
    pub max_concurrent: usize,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        let limits = SandboxLimits::default();
        SandboxSettings {
            python: "python3".into(),
            wall_timeout_ms: limits.wall_timeout_ms,
            memory_bytes: limits.memory_bytes,
            output_cap_bytes: limits.output_cap_bytes,
            deny_network: limits.deny_network,
            max_concurrent: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PathSettings {
    pub seed_dataset: PathBuf,
    pub summary_pool: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendSettings,
    pub n_rounds: u32,
    pub per_step_width: u32,
    #[serde(alias = "K")]
    pub k: u32,
    #[serde(alias = "T")]
    pub weight_temperature: f64,
    pub generation_temperature: f64,
    pub max_tokens: u32,
    /// Rewritten descriptions per seed in the rewrite baseline.
    pub rewrites: u32,
    pub include_rft_pool: bool,
    pub pairing_mode: PairingMode,
    pub random_seed: u64,
    pub chain_parallelism: usize,
    pub sandbox: SandboxSettings,
    pub paths: PathSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendSettings::default(),
            n_rounds: 20,
            per_step_width: 3,
            k: 8,
            weight_temperature: 2.0,
            generation_temperature: 1.0,
            max_tokens: 512,
            rewrites: 5,
            include_rft_pool: false,
            pairing_mode: PairingMode::SeedOnly,
            random_seed: 0,
            chain_parallelism: 4,
            sandbox: SandboxSettings::default(),
            paths: PathSettings {
                seed_dataset: PathBuf::new(),
                summary_pool: None,
                out_dir: PathBuf::from("out"),
            },
        }
    }
}

impl RunConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut check = |ok: bool, field: &str, message: &str| {
            if !ok {
                violations.push(Violation {
                    field: field.into(),
                    message: message.into(),
                });
            }
        };
        check(self.n_rounds >= 1, "n_rounds", "must be >= 1");
        check(self.per_step_width >= 1, "per_step_width", "must be >= 1");
        check(self.k >= 1, "k", "K must be >= 1");
        check(
            self.weight_temperature != 0.0,
            "weight_temperature",
            "T must be nonzero",
        );
        check(
            self.generation_temperature > 0.0,
            "generation_temperature",
            "must be > 0",
        );
        check(self.max_tokens >= 1, "max_tokens", "must be >= 1");
        check(self.rewrites >= 1, "rewrites", "must be >= 1");
        check(
            self.chain_parallelism >= 1,
            "chain_parallelism",
            "must be >= 1",
        );
        check(
            self.backend.max_concurrent >= 1,
            "backend.max_concurrent",
            "must be >= 1",
        );
        check(
            self.sandbox.wall_timeout_ms > 0,
            "sandbox.wall_timeout_ms",
            "must be > 0",
        );
        check(
            self.sandbox.max_concurrent >= 1,
            "sandbox.max_concurrent",
            "must be >= 1",
        );
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        check(
            unit(self.backend.mock.seed_pass_rate),
            "backend.mock.seed_pass_rate",
            "must be in [0, 1]",
        );
        check(
            unit(self.backend.mock.derived_pass_rate),
            "backend.mock.derived_pass_rate",
            "must be in [0, 1]",
        );
        check(
            self.backend.mock.uniform_token_probability > 0.0
                && self.backend.mock.uniform_token_probability <= 1.0,
            "backend.mock.uniform_token_probability",
            "must be in (0, 1]",
        );
        violations
    }

    fn backend_spec(&self, base_url: &str, model: &str) -> BackendSpec {
        BackendSpec {
            base_url: base_url.into(),
            model: model.into(),
            request_timeout_ms: self.backend.request_timeout_ms,
            max_retries: self.backend.max_retries,
            retry_backoff_ms: self.backend.retry_backoff_ms,
            max_concurrent: self.backend.max_concurrent,
        }
    }

    fn mock_backend(&self) -> MockBackend {
        let score_mode = match self.backend.mock.score_mode {
            MockScoreModeSetting::Uniform => ScoreMode::Uniform {
                token_probability: self.backend.mock.uniform_token_probability,
            },
            MockScoreModeSetting::TokenHash => ScoreMode::TokenHash,
        };
        MockBackend::new(MockConfig {
            seed: self.random_seed,
            seed_pass_rate: self.backend.mock.seed_pass_rate,
            derived_pass_rate: self.backend.mock.derived_pass_rate,
            score_mode,
        })
    }

    /// Build the generation backend.
    pub fn generation_backend(&self) -> Result<Arc<dyn Backend>, BackendError> {
        match self.backend.kind {
            BackendKind::Mock => Ok(Arc::new(self.mock_backend())),
            BackendKind::Http => Ok(Arc::new(HttpBackend::new(
                self.backend_spec(&self.backend.base_url, &self.backend.model),
            )?)),
        }
    }

    /// Build the scoring backend; the generation endpoint unless a distinct
    /// scoring endpoint is configured.
    pub fn scoring_backend(&self) -> Result<Arc<dyn Backend>, BackendError> {
        match self.backend.kind {
            BackendKind::Mock => Ok(Arc::new(self.mock_backend())),
            BackendKind::Http => {
                let base_url = self
                    .backend
                    .scoring_base_url
                    .as_deref()
                    .unwrap_or(&self.backend.base_url);
                let model = self
                    .backend
                    .scoring_model
                    .as_deref()
                    .unwrap_or(&self.backend.model);
                Ok(Arc::new(HttpBackend::new(
                    self.backend_spec(base_url, model),
                )?))
            }
        }
    }

    pub fn sandbox_limits(&self) -> SandboxLimits {
        SandboxLimits {
            wall_timeout_ms: self.sandbox.wall_timeout_ms,
            memory_bytes: self.sandbox.memory_bytes,
            output_cap_bytes: self.sandbox.output_cap_bytes,
            deny_network: self.sandbox.deny_network,
        }
    }

    pub fn build_sandbox(&self) -> Result<Sandbox, SandboxError> {
        Sandbox::new(
            &self.sandbox.python,
            self.sandbox_limits(),
            self.sandbox.max_concurrent,
        )
    }

    /// Generation budget per seed per iteration: rounds times width.
    pub fn generation_budget(&self) -> u32 {
        self.n_rounds * self.per_step_width
    }
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "",
        &[
            "backend",
            "n_rounds",
            "per_step_width",
            "k",
            "K",
            "weight_temperature",
            "T",
            "generation_temperature",
            "max_tokens",
            "rewrites",
            "include_rft_pool",
            "pairing_mode",
            "random_seed",
            "chain_parallelism",
            "sandbox",
            "paths",
        ],
    ),
    (
        "backend",
        &[
            "kind",
            "base_url",
            "model",
            "request_timeout_ms",
            "max_retries",
            "retry_backoff_ms",
            "max_concurrent",
            "scoring_base_url",
            "scoring_model",
            "mock",
        ],
    ),
    (
        "backend.mock",
        &[
            "seed_pass_rate",
            "derived_pass_rate",
            "score_mode",
            "uniform_token_probability",
        ],
    ),
    (
        "sandbox",
        &[
            "python",
            "wall_timeout_ms",
            "memory_bytes",
            "output_cap_bytes",
            "deny_network",
            "max_concurrent",
        ],
    ),
    ("paths", &["seed_dataset", "summary_pool", "out_dir"]),
];

/// Unknown keys are warnings, not errors, for forward compatibility.
fn warn_unknown_keys(value: &toml::Value) -> Vec<String> {
    let mut unknown = Vec::new();
    let mut visit = |prefix: &str, table: &toml::value::Table| {
        let Some((_, known)) = KNOWN_KEYS.iter().find(|(p, _)| *p == prefix) else {
            return;
        };
        for key in table.keys() {
            if !known.contains(&key.as_str()) {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                unknown.push(path);
            }
        }
    };
    if let Some(table) = value.as_table() {
        visit("", table);
        for prefix in ["backend", "sandbox", "paths"] {
            if let Some(nested) = table.get(prefix).and_then(|v| v.as_table()) {
                visit(prefix, nested);
            }
        }
        if let Some(mock) = table
            .get("backend")
            .and_then(|v| v.as_table())
            .and_then(|t| t.get("mock"))
            .and_then(|v| v.as_table())
        {
            visit("backend.mock", mock);
        }
    }
    for path in &unknown {
        log::warn!("config: unknown key `{path}` ignored");
    }
    unknown
}

/// Parse and validate a config from TOML text. Pure; fuzzed directly.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let value: toml::Value =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    warn_unknown_keys(&value);
    let config: RunConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }
    Ok(config)
}

/// Load, parse, and validate a config file, filling defaults.
pub fn validate_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
