//! Shared domain types and their invariants.
//!
//! Everything that crosses a module or file boundary is defined here:
//! seed tasks, generated candidates, chain trajectories, and the final
//! training records. All types are immutable after construction and safe
//! to share across threads; the line-delimited file formats for them live
//! in [`crate::records`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack for floating-point invariant checks on persisted values.
pub const PPL_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("tests must be nonempty (task {id})")]
    EmptyTests { id: String },
    #[error("{field} must be nonempty")]
    EmptyField { field: &'static str },
    #[error("test {index} of task {id}: call_expression does not reference entry point `{entry_point}`")]
    TestMissingEntryPoint {
        id: String,
        index: usize,
        entry_point: String,
    },
    #[error("duplicate id {id:?} at lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("perplexity {perplexity} inconsistent with token logprobs (expected {expected})")]
    PerplexityMismatch { perplexity: f64, expected: f64 },
    #[error("token logprob {value} is positive beyond slack")]
    PositiveLogprob { value: f64 },
    #[error("pass report: all_passed={all_passed} contradicts per-test outcomes")]
    PassReportContradiction { all_passed: bool },
    #[error("round indices must be consecutive from 1 (found {found} at position {position})")]
    NonConsecutiveRounds { found: u32, position: usize },
    #[error("chosen_code index {index} out of bounds ({len} generated)")]
    ChosenCodeOutOfBounds { index: usize, len: usize },
    #[error("chosen_code at round {round} does not pass all tests")]
    ChosenCodeNotPassing { round: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One worked input/output pair shown in a code-generation docstring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExample {
    pub call: String,
    pub output: String,
}

/// How a test's actual value is compared against the expected text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Comparison {
    /// Structural equality on parsed literals where parseable, string
    /// equality otherwise.
    Equality,
    /// Relative-tolerance comparison for numeric results.
    Approx { tolerance: f64 },
}

impl Default for Comparison {
    fn default() -> Self {
        Comparison::Equality
    }
}

/// A single executable check: a call of the task's entry point plus the
/// expected value text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub call_expression: String,
    pub expected: String,
    #[serde(default)]
    pub comparison: Comparison,
}

/// One seed description with entry point and test cases; the unit of
/// self-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTask {
    pub id: String,
    pub description: String,
    pub entry_point: String,
    /// Function-head text, e.g. `def first_repeated_char(str1):`.
    pub signature: String,
    pub tests: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples_for_prompt: Option<Vec<PromptExample>>,
}

impl SeedTask {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::EmptyField { field: "id" });
        }
        if self.description.trim().is_empty() {
            return Err(ModelError::EmptyField {
                field: "description",
            });
        }
        if self.tests.is_empty() {
            return Err(ModelError::EmptyTests {
                id: self.id.clone(),
            });
        }
        for (index, test) in self.tests.iter().enumerate() {
            if !test.call_expression.contains(&self.entry_point) {
                return Err(ModelError::TestMissingEntryPoint {
                    id: self.id.clone(),
                    index,
                    entry_point: self.entry_point.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Which generation pipeline produced a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Translation-chain generation.
    Gift,
    /// Rejection sampling from the seed description.
    Rft,
    /// Rejection sampling from the seed description in rewrite mode.
    RftRdSeed,
    /// Rejection sampling from a rewritten description.
    RftRdRewrite,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Gift => "gift",
            Origin::Rft => "rft",
            Origin::RftRdSeed => "rft_rd_seed",
            Origin::RftRdRewrite => "rft_rd_rewrite",
        }
    }
}

/// Why a test failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    WrongOutput,
    RuntimeError,
    Timeout,
    ResourceLimit,
}

/// Outcome of one test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_kind: Option<FailureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Result of running one candidate against all of a task's tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    /// One entry per task test, in task order.
    pub per_test: Vec<TestOutcome>,
    pub all_passed: bool,
    pub wall_time_ms: u64,
}

impl PassReport {
    pub fn from_outcomes(per_test: Vec<TestOutcome>, wall_time_ms: u64) -> Self {
        let all_passed = !per_test.is_empty() && per_test.iter().all(|t| t.passed);
        PassReport {
            per_test,
            all_passed,
            wall_time_ms,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let expected = !self.per_test.is_empty() && self.per_test.iter().all(|t| t.passed);
        if self.all_passed != expected {
            return Err(ModelError::PassReportContradiction {
                all_passed: self.all_passed,
            });
        }
        Ok(())
    }
}

/// One generated code with full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: String,
    pub seed_id: String,
    /// The description the code was generated from (the seed description at
    /// round 0/1, a self-generated summary later in a chain).
    pub source_description: String,
    /// Chain round the code was generated at; 0 means generated directly
    /// from the seed description outside a chain.
    pub round: u32,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_report: Option<PassReport>,
    /// Per-token log-probabilities backing `perplexity`. Generation-time
    /// logprobs until a scoring pass replaces them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
}

impl Candidate {
    pub fn passed(&self) -> bool {
        self.pass_report.as_ref().is_some_and(|r| r.all_passed)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(logprobs) = &self.token_logprobs {
            for &value in logprobs {
                if value > PPL_CONSISTENCY_TOL || !value.is_finite() {
                    return Err(ModelError::PositiveLogprob { value });
                }
            }
            if let Some(ppl) = self.perplexity {
                if !logprobs.is_empty() {
                    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
                    let expected = (-mean).exp();
                    if (ppl - expected).abs() > PPL_CONSISTENCY_TOL {
                        return Err(ModelError::PerplexityMismatch {
                            perplexity: ppl,
                            expected,
                        });
                    }
                }
            }
        }
        if let Some(report) = &self.pass_report {
            report.validate()?;
        }
        Ok(())
    }
}

/// Why a chain stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Completed,
    BackendError,
    BudgetExhausted,
}

/// One chain round: the description used, everything generated from it,
/// which code was kept, and the summary it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round_index: u32,
    pub input_description: String,
    pub generated_codes: Vec<Candidate>,
    /// Index into `generated_codes` of the code kept for summarization;
    /// absent when no candidate passed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_code: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_description: Option<String>,
}

impl RoundRecord {
    pub fn chosen_candidate(&self) -> Option<&Candidate> {
        self.chosen_code.and_then(|i| self.generated_codes.get(i))
    }
}

/// Full trajectory of one translation chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub seed_id: String,
    pub rounds: Vec<RoundRecord>,
    pub terminal_reason: TerminalReason,
}

impl ChainRecord {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (position, round) in self.rounds.iter().enumerate() {
            if round.round_index as usize != position + 1 {
                return Err(ModelError::NonConsecutiveRounds {
                    found: round.round_index,
                    position,
                });
            }
            if let Some(index) = round.chosen_code {
                let len = round.generated_codes.len();
                if index >= len {
                    return Err(ModelError::ChosenCodeOutOfBounds { index, len });
                }
                if !round.generated_codes[index].passed() {
                    return Err(ModelError::ChosenCodeNotPassing {
                        round: round.round_index,
                    });
                }
            }
            for candidate in &round.generated_codes {
                candidate.validate()?;
            }
        }
        Ok(())
    }

    /// All candidates that passed their tests, in chain order.
    pub fn passing_candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.rounds
            .iter()
            .flat_map(|r| r.generated_codes.iter())
            .filter(|c| c.passed())
    }
}

/// How selected codes are paired with descriptions in the output dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Every record pairs a code with the seed description verbatim.
    SeedOnly,
    /// Additionally pair each qualifying self-generated description with
    /// the code generated from it.
    OnePair,
    /// Additionally pair each qualifying self-generated description with
    /// codes sampled from the seed's pool.
    MixPair,
}

impl PairingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairingMode::SeedOnly => "seed_only",
            PairingMode::OnePair => "one_pair",
            PairingMode::MixPair => "mix_pair",
        }
    }
}

/// One (description, code) training pair with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub description: String,
    pub code: String,
    pub seed_id: String,
    pub pairing_mode: PairingMode,
    pub candidate_origin: Origin,
    /// 1-based self-training iteration this record was produced in.
    pub iteration: u32,
}

impl SftRecord {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.description.trim().is_empty() {
            return Err(ModelError::EmptyField {
                field: "description",
            });
        }
        if self.code.trim().is_empty() {
            return Err(ModelError::EmptyField { field: "code" });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_task() -> SeedTask {
        SeedTask {
            id: "t1".into(),
            description: "Write a python function to add two numbers.".into(),
            entry_point: "add".into(),
            signature: "def add(a, b):".into(),
            tests: vec![TestCase {
                call_expression: "add(1, 2)".into(),
                expected: "3".into(),
                comparison: Comparison::Equality,
            }],
            examples_for_prompt: None,
        }
    }

    #[test]
    fn seed_task_requires_tests() {
        let mut task = sample_task();
        task.tests.clear();
        assert!(matches!(task.validate(), Err(ModelError::EmptyTests { .. })));
    }

    #[test]
    fn test_must_reference_entry_point() {
        let mut task = sample_task();
        task.tests[0].call_expression = "subtract(1, 2)".into();
        assert!(matches!(
            task.validate(),
            Err(ModelError::TestMissingEntryPoint { index: 0, .. })
        ));
    }

    #[test]
    fn pass_report_all_passed_consistency() {
        let report = PassReport {
            per_test: vec![
                TestOutcome {
                    passed: true,
                    failure_kind: None,
                    detail: None,
                },
                TestOutcome {
                    passed: false,
                    failure_kind: Some(FailureKind::WrongOutput),
                    detail: None,
                },
            ],
            all_passed: true,
            wall_time_ms: 5,
        };
        assert!(report.validate().is_err());

        let fixed = PassReport::from_outcomes(report.per_test.clone(), 5);
        assert!(!fixed.all_passed);
        assert!(fixed.validate().is_ok());
    }

    #[test]
    fn candidate_perplexity_must_match_logprobs() {
        let logprobs = vec![-1.0, -2.0];
        let good = Candidate {
            code: "def add(a, b):\n    return a + b".into(),
            seed_id: "t1".into(),
            source_description: "desc".into(),
            round: 0,
            origin: Origin::Rft,
            pass_report: None,
            token_logprobs: Some(logprobs.clone()),
            perplexity: Some((1.5f64).exp()),
        };
        assert!(good.validate().is_ok());

        let bad = Candidate {
            perplexity: Some(2.0),
            ..good
        };
        assert!(matches!(
            bad.validate(),
            Err(ModelError::PerplexityMismatch { .. })
        ));
    }

    #[test]
    fn candidate_rejects_positive_logprobs() {
        let candidate = Candidate {
            code: "x".into(),
            seed_id: "t1".into(),
            source_description: "d".into(),
            round: 1,
            origin: Origin::Gift,
            pass_report: None,
            token_logprobs: Some(vec![0.5]),
            perplexity: None,
        };
        assert!(matches!(
            candidate.validate(),
            Err(ModelError::PositiveLogprob { .. })
        ));
    }

    #[test]
    fn chain_rounds_must_be_consecutive() {
        let chain = ChainRecord {
            seed_id: "t1".into(),
            rounds: vec![RoundRecord {
                round_index: 2,
                input_description: "d".into(),
                generated_codes: vec![],
                chosen_code: None,
                summary_description: None,
            }],
            terminal_reason: TerminalReason::Completed,
        };
        assert!(matches!(
            chain.validate(),
            Err(ModelError::NonConsecutiveRounds { found: 2, .. })
        ));
    }
}
