//! Deterministic mock backend.
//!
//! A pure function of (prompt, n, temperature bucket, configured seed):
//! the same request always yields the same completions, across runs and
//! regardless of call order, which is what end-to-end reproducibility
//! tests key on.
//!
//! The mock understands the three prompt shapes rendered by
//! [`crate::prompts`]:
//!
//! * code-generation prompts are answered with a function body — a correct
//!   solution from the solutions bank (tagged with a variant marker so the
//!   `n` samples are textually distinct) or a deliberately failing body,
//!   decided by a content hash against the configured pass rate;
//! * summarization prompts are answered with a marked self-generated
//!   description;
//! * rewrite prompts are answered with marked paraphrases.
//!
//! Descriptions the mock itself produced carry a recognizable prefix, and
//! codes generated from them pass at `derived_pass_rate` instead of
//! `seed_pass_rate`, mirroring the accuracy drop of model-written
//! descriptions relative to curated seed descriptions.

use std::collections::BTreeMap;

use super::{
    check_generation_args, check_score_args, Backend, BackendError, Completion, FinishReason,
};
use crate::prompts::SUMMARY_CUE;
use crate::rng::hash64;

/// Prefix the mock puts on summaries it generates.
pub const SUMMARY_MARKER: &str = "Auto-summarized:";
/// Prefix the mock puts on rewrites it generates.
pub const REWRITE_MARKER: &str = "Rewritten:";

/// How the mock assigns per-token logprobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMode {
    /// Every token gets `ln(token_probability)`. Generation-time and
    /// scoring-time perplexities agree exactly in this mode.
    Uniform { token_probability: f64 },
    /// Each token gets a probability in [0.35, 0.95) hashed from its text,
    /// giving varied but reproducible perplexities.
    TokenHash,
}

#[derive(Debug, Clone)]
pub struct MockConfig {
    pub seed: u64,
    /// Pass probability for codes generated from a curated description.
    pub seed_pass_rate: f64,
    /// Pass probability for codes generated from a description the mock
    /// itself produced (summary or rewrite).
    pub derived_pass_rate: f64,
    pub score_mode: ScoreMode,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 0,
            seed_pass_rate: 0.85,
            derived_pass_rate: 0.35,
            score_mode: ScoreMode::Uniform {
                token_probability: 0.5,
            },
        }
    }
}

pub struct MockBackend {
    config: MockConfig,
    /// entry point -> correct function body (indented four spaces).
    solutions: BTreeMap<String, String>,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        MockBackend {
            config,
            solutions: default_solutions(),
        }
    }

    pub fn with_solution(mut self, entry_point: &str, body: &str) -> Self {
        self.solutions.insert(entry_point.into(), body.into());
        self
    }

    fn bucket(temperature: f64) -> i64 {
        (temperature * 1000.0).round() as i64
    }

    fn unit_hash(&self, parts: &[&[u8]]) -> f64 {
        let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
        let seed_bytes = self.config.seed.to_le_bytes();
        all.push(&seed_bytes);
        all.extend_from_slice(parts);
        hash64(&all) as f64 / u64::MAX as f64
    }

    fn tag(&self, parts: &[&[u8]]) -> u64 {
        let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
        let seed_bytes = self.config.seed.to_le_bytes();
        all.push(&seed_bytes);
        all.extend_from_slice(parts);
        hash64(&all)
    }

    fn token_logprob(&self, token: &str) -> f64 {
        match self.config.score_mode {
            ScoreMode::Uniform { token_probability } => token_probability.ln(),
            ScoreMode::TokenHash => {
                let u = self.unit_hash(&[b"tok", token.as_bytes()]);
                (0.35 + 0.6 * u).ln()
            }
        }
    }

    fn logprobs_for(&self, text: &str) -> Vec<f64> {
        text.split_whitespace()
            .map(|t| self.token_logprob(t))
            .collect()
    }

    fn completion(&self, text: String, want_logprobs: bool) -> Completion {
        let token_logprobs = want_logprobs.then(|| self.logprobs_for(&text));
        Completion {
            text,
            token_logprobs,
            finish_reason: FinishReason::Stop,
        }
    }

    fn codegen_body(&self, prompt: &str, entry: &str, derived: bool, i: usize, bucket: i64) -> String {
        let pass_rate = if derived {
            self.config.derived_pass_rate
        } else {
            self.config.seed_pass_rate
        };
        let roll = self.unit_hash(&[
            b"gen",
            prompt.as_bytes(),
            &(i as u64).to_le_bytes(),
            &bucket.to_le_bytes(),
        ]);
        let tag = self.tag(&[
            b"variant",
            prompt.as_bytes(),
            &(i as u64).to_le_bytes(),
            &bucket.to_le_bytes(),
        ]);
        let solution = self.solutions.get(entry);
        if roll < pass_rate && solution.is_some() {
            format!("\n{}\n    # variant {:08x}", solution.unwrap(), tag as u32)
        } else if tag % 2 == 0 {
            format!("\n    return \"__wrong_{:08x}__\"", tag as u32)
        } else {
            format!("\n    raise RuntimeError(\"scripted failure {:08x}\")", tag as u32)
        }
    }
}

impl Backend for MockBackend {
    fn complete(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        _max_tokens: usize,
        want_logprobs: bool,
    ) -> Result<Vec<Completion>, BackendError> {
        check_generation_args(n, temperature)?;
        let bucket = Self::bucket(temperature);
        let completions = match classify(prompt) {
            PromptKind::Codegen { entry, description } => (0..n)
                .map(|i| {
                    let derived = description.starts_with(SUMMARY_MARKER)
                        || description.starts_with(REWRITE_MARKER);
                    let body = self.codegen_body(prompt, &entry, derived, i, bucket);
                    self.completion(body, want_logprobs)
                })
                .collect(),
            PromptKind::Summarize { entry } => (0..n)
                .map(|i| {
                    let tag = self.tag(&[
                        b"sum",
                        prompt.as_bytes(),
                        &(i as u64).to_le_bytes(),
                        &bucket.to_le_bytes(),
                    ]);
                    let entry = entry.as_deref().unwrap_or("function");
                    let text = format!(
                        "{SUMMARY_MARKER} write a python function {entry} with behavior digest {:08x}.",
                        tag as u32
                    );
                    self.completion(text, want_logprobs)
                })
                .collect(),
            PromptKind::Rewrite { original } => (0..n)
                .map(|i| {
                    let tag = self.tag(&[
                        b"rew",
                        prompt.as_bytes(),
                        &(i as u64).to_le_bytes(),
                        &bucket.to_le_bytes(),
                    ]);
                    let text = format!("{REWRITE_MARKER} {original} (view {:08x})", tag as u32);
                    self.completion(text, want_logprobs)
                })
                .collect(),
            PromptKind::Other => (0..n)
                .map(|i| {
                    let tag = self.tag(&[
                        b"other",
                        prompt.as_bytes(),
                        &(i as u64).to_le_bytes(),
                        &bucket.to_le_bytes(),
                    ]);
                    self.completion(format!("ok {:08x}", tag as u32), want_logprobs)
                })
                .collect(),
        };
        Ok(completions)
    }

    fn score(&self, _context: &str, continuation: &str) -> Result<Vec<f64>, BackendError> {
        check_score_args(continuation)?;
        let logprobs = self.logprobs_for(continuation);
        if logprobs.is_empty() {
            return Err(BackendError::InvalidRequest(
                "continuation has no tokens".into(),
            ));
        }
        Ok(logprobs)
    }
}

enum PromptKind<'a> {
    Codegen { entry: String, description: &'a str },
    Summarize { entry: Option<String> },
    Rewrite { original: &'a str },
    Other,
}

fn entry_point_after(text: &str, from: usize) -> Option<String> {
    let tail = &text[from..];
    let def = tail.find("def ")?;
    let rest = &tail[def + 4..];
    let open = rest.find('(')?;
    let name = rest[..open].trim();
    (!name.is_empty()).then(|| name.to_string())
}

fn classify(prompt: &str) -> PromptKind<'_> {
    if prompt.starts_with("Rewrite the given Description") {
        let original = prompt
            .split_once("###Description:\n")
            .and_then(|(_, rest)| rest.split_once("\n###New Description:"))
            .map(|(original, _)| original.trim())
            .unwrap_or("");
        return PromptKind::Rewrite { original };
    }
    if prompt.trim_end().ends_with(SUMMARY_CUE) {
        // Summarize the last code block in the prompt.
        let from = prompt.rfind("def ").unwrap_or(0);
        return PromptKind::Summarize {
            entry: entry_point_after(prompt, from),
        };
    }
    if prompt.contains("\"\"\"") {
        if let Some(entry) = entry_point_after(prompt, 0) {
            let description = prompt
                .split_once("\"\"\" ")
                .map(|(_, rest)| rest.lines().next().unwrap_or("").trim())
                .unwrap_or("");
            return PromptKind::Codegen { entry, description };
        }
    }
    PromptKind::Other
}

/// Correct bodies (four-space indented) for the tasks in the bundled
/// fixture dataset.
fn default_solutions() -> BTreeMap<String, String> {
    let mut bank = BTreeMap::new();
    bank.insert(
        "first_repeated_char".into(),
        concat!(
            "    seen = []\n",
            "    for char in str1:\n",
            "        if char in seen:\n",
            "            return char\n",
            "        seen.append(char)\n",
            "    return None"
        )
        .into(),
    );
    bank.insert(
        "sum_of_list".into(),
        concat!(
            "    total = 0\n",
            "    for value in nums:\n",
            "        total += value\n",
            "    return total"
        )
        .into(),
    );
    bank.insert(
        "reverse_words".into(),
        "    return \" \".join(reversed(s.split()))".into(),
    );
    bank.insert(
        "mean_value".into(),
        "    return sum(values) / len(values)".into(),
    );
    bank
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Comparison, SeedTask, TestCase};
    use crate::prompts::render_codegen_prompt;

    fn task() -> SeedTask {
        SeedTask {
            id: "t".into(),
            description: "Write a python function to find the first repeated character in a given string.".into(),
            entry_point: "first_repeated_char".into(),
            signature: "def first_repeated_char(str1):".into(),
            tests: vec![TestCase {
                call_expression: "first_repeated_char(\"abcabc\")".into(),
                expected: "\"a\"".into(),
                comparison: Comparison::Equality,
            }],
            examples_for_prompt: None,
        }
    }

    #[test]
    fn completions_are_deterministic_and_distinct() {
        let backend = MockBackend::new(MockConfig::default());
        let prompt = render_codegen_prompt(&task().description, &task()).unwrap();
        let a = backend.complete(&prompt, 3, 1.0, 512, true).unwrap();
        let b = backend.complete(&prompt, 3, 1.0, 512, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_ne!(a[0].text, a[1].text);
        assert_ne!(a[1].text, a[2].text);
    }

    #[test]
    fn different_seed_changes_output() {
        let prompt = render_codegen_prompt(&task().description, &task()).unwrap();
        let a = MockBackend::new(MockConfig::default())
            .complete(&prompt, 1, 1.0, 512, false)
            .unwrap();
        let b = MockBackend::new(MockConfig {
            seed: 99,
            ..MockConfig::default()
        })
        .complete(&prompt, 1, 1.0, 512, false)
        .unwrap();
        // Variant markers differ even if both are passing bodies.
        assert_ne!(a[0].text, b[0].text);
    }

    #[test]
    fn pass_rate_zero_never_emits_solution() {
        let backend = MockBackend::new(MockConfig {
            seed_pass_rate: 0.0,
            derived_pass_rate: 0.0,
            ..MockConfig::default()
        });
        let prompt = render_codegen_prompt(&task().description, &task()).unwrap();
        for completion in backend.complete(&prompt, 10, 1.0, 512, false).unwrap() {
            assert!(
                completion.text.contains("__wrong_") || completion.text.contains("scripted failure"),
                "unexpected passing body: {}",
                completion.text
            );
        }
    }

    #[test]
    fn pass_rate_one_always_emits_solution() {
        let backend = MockBackend::new(MockConfig {
            seed_pass_rate: 1.0,
            ..MockConfig::default()
        });
        let prompt = render_codegen_prompt(&task().description, &task()).unwrap();
        for completion in backend.complete(&prompt, 10, 1.0, 512, false).unwrap() {
            assert!(completion.text.contains("seen.append(char)"));
        }
    }

    #[test]
    fn summaries_carry_marker_and_lower_pass_rate_applies() {
        let backend = MockBackend::new(MockConfig {
            seed_pass_rate: 1.0,
            derived_pass_rate: 0.0,
            ..MockConfig::default()
        });
        let code = "def first_repeated_char(str1):\n    return None";
        let pool = crate::prompts::SummaryExamplePool::new(vec![crate::prompts::SummaryExample {
            code: "def add(a, b):\n    return a + b".into(),
            description: "Add two numbers.".into(),
        }]);
        let mut rng = crate::rng::derive_rng(0, "test");
        let sprompt = crate::prompts::render_summarization_prompt(code, &pool, &mut rng).unwrap();
        let summary = &backend.complete(&sprompt, 1, 1.0, 128, false).unwrap()[0].text;
        assert!(summary.starts_with(SUMMARY_MARKER));

        // A codegen prompt whose docstring is that summary is "derived", so
        // with derived_pass_rate = 0 it must fail.
        let codegen = render_codegen_prompt(summary, &task()).unwrap();
        for completion in backend.complete(&codegen, 5, 1.0, 512, false).unwrap() {
            assert!(!completion.text.contains("seen.append(char)"));
        }
    }

    #[test]
    fn rewrite_prompt_yields_marked_paraphrases() {
        let backend = MockBackend::new(MockConfig::default());
        let prompt = crate::prompts::render_rewrite_prompt("Find the first repeated character.")
            .unwrap();
        let rewrites = backend.complete(&prompt, 5, 1.0, 128, false).unwrap();
        assert_eq!(rewrites.len(), 5);
        for rewrite in &rewrites {
            assert!(rewrite.text.starts_with(REWRITE_MARKER));
            assert!(rewrite.text.contains("Find the first repeated character."));
        }
    }

    #[test]
    fn uniform_score_is_ln_half_per_token() {
        let backend = MockBackend::new(MockConfig::default());
        let logprobs = backend.score("context", "a b c d").unwrap();
        assert_eq!(logprobs.len(), 4);
        for lp in logprobs {
            assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn score_length_is_token_count_regardless_of_context() {
        let backend = MockBackend::new(MockConfig::default());
        let continuation = "def f():\n    return 1";
        let expected = continuation.split_whitespace().count();
        for context in ["", "x", "a much longer context string"] {
            let logprobs = backend.score(context, continuation).unwrap();
            assert_eq!(logprobs.len(), expected);
        }
    }

    #[test]
    fn empty_continuation_rejected() {
        let backend = MockBackend::new(MockConfig::default());
        assert!(matches!(
            backend.score("ctx", ""),
            Err(BackendError::InvalidRequest(_))
        ));
    }
}
