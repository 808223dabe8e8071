//! Per-seed translation chains between descriptions and codes.
//!
//! A chain alternates conditional sampling: generate code candidates from
//! the current description, validate them, keep one passing code, summarize
//! it into a new description, and repeat. Round `k` depends only on round
//! `k-1`'s outputs (plus the static templates), so the walk explores the
//! task's description-code space and the collected codes approximate its
//! marginal code distribution instead of the conditional distribution of
//! the seed wording alone.
//!
//! Fallbacks when no candidate passes a round: reuse the code summarized in
//! the previous round; at round 1, where nothing has been summarized yet,
//! summarize the first generated (failing) candidate so the chain can
//! proceed — that code is logged distinctly and never enters a pool.

use std::collections::BTreeMap;

use crate::backend::Backend;
use crate::config::RunConfig;
use crate::model::{
    Candidate, ChainRecord, Origin, RoundRecord, SeedTask, TerminalReason,
};
use crate::prompts::{render_codegen_prompt, render_summarization_prompt, SummaryExamplePool};
use crate::rng::derive_rng;
use crate::sandbox::{Sandbox, SandboxError};

/// Join a completion onto its prompt to form a standalone program,
/// truncating the completion at the first dedented line (text the backend
/// emitted past the function body).
pub fn assemble_candidate_code(prompt: &str, completion_text: &str) -> String {
    let mut body = String::new();
    for line in completion_text.lines() {
        if !line.is_empty() && !line.starts_with(' ') && !line.starts_with('\t') {
            break;
        }
        body.push('\n');
        body.push_str(line.trim_end());
    }
    // lines() drops a leading newline; completions start mid-line after the
    // prompt's closing quotes, so the first segment is empty and the push
    // above restores the newline separator.
    let mut code = String::with_capacity(prompt.len() + body.len());
    code.push_str(prompt);
    code.push_str(body.trim_end());
    code
}

/// Run one chain of `config.n_rounds` rounds for `task`.
///
/// Backend failures mid-chain terminate the record with
/// `terminal_reason: backend_error`, preserving completed rounds. Sandbox
/// host failures propagate as errors: the environment was verified at
/// startup, so they indicate a broken host, not a bad candidate.
pub fn run_chain(
    task: &SeedTask,
    config: &RunConfig,
    backend: &dyn Backend,
    sandbox: &Sandbox,
    pool: &SummaryExamplePool,
) -> Result<ChainRecord, SandboxError> {
    let mut rng = derive_rng(config.random_seed, &format!("chain/{}", task.id));
    let mut rounds: Vec<RoundRecord> = Vec::with_capacity(config.n_rounds as usize);
    let mut current_description = task.description.clone();
    let mut last_summarized: Option<String> = None;

    for round_index in 1..=config.n_rounds {
        let prompt = match render_codegen_prompt(&current_description, task) {
            Ok(prompt) => prompt,
            Err(e) => {
                // A backend produced an unusable (empty) description.
                log::warn!("seed {}: round {round_index}: {e}; chain stopped", task.id);
                return Ok(ChainRecord {
                    seed_id: task.id.clone(),
                    rounds,
                    terminal_reason: TerminalReason::BackendError,
                });
            }
        };
        let completions = match backend.complete(
            &prompt,
            config.per_step_width as usize,
            config.generation_temperature,
            config.max_tokens as usize,
            true,
        ) {
            Ok(completions) => completions,
            Err(e) => {
                log::warn!("seed {}: round {round_index}: backend error: {e}", task.id);
                return Ok(ChainRecord {
                    seed_id: task.id.clone(),
                    rounds,
                    terminal_reason: TerminalReason::BackendError,
                });
            }
        };

        let mut generated: Vec<Candidate> = Vec::with_capacity(completions.len());
        for completion in &completions {
            let code = assemble_candidate_code(&prompt, &completion.text);
            let report = sandbox.run(&code, task)?;
            generated.push(Candidate {
                code,
                seed_id: task.id.clone(),
                source_description: current_description.clone(),
                round: round_index,
                origin: Origin::Gift,
                pass_report: Some(report),
                token_logprobs: completion.token_logprobs.clone(),
                perplexity: None,
            });
        }

        let chosen = generated.iter().position(|c| c.passed());
        let summary_source = match chosen {
            Some(index) => {
                let code = generated[index].code.clone();
                last_summarized = Some(code.clone());
                code
            }
            None => match &last_summarized {
                Some(code) => code.clone(),
                None => {
                    // Round-1 total failure: no earlier round to fall back
                    // to. Summarize the first failing candidate so the chain
                    // can proceed; it never enters a pool.
                    log::info!(
                        "seed {}: round 1 produced no passing candidate; summarizing a failing one",
                        task.id
                    );
                    let code = generated[0].code.clone();
                    last_summarized = Some(code.clone());
                    code
                }
            },
        };

        let summary_prompt = match render_summarization_prompt(&summary_source, pool, &mut rng) {
            Ok(prompt) => prompt,
            Err(e) => {
                log::warn!("seed {}: round {round_index}: {e}", task.id);
                rounds.push(RoundRecord {
                    round_index,
                    input_description: current_description.clone(),
                    generated_codes: generated,
                    chosen_code: chosen,
                    summary_description: None,
                });
                return Ok(ChainRecord {
                    seed_id: task.id.clone(),
                    rounds,
                    terminal_reason: TerminalReason::BackendError,
                });
            }
        };
        let summary = match backend.complete(
            &summary_prompt,
            1,
            config.generation_temperature,
            config.max_tokens as usize,
            false,
        ) {
            Ok(completions) => completions[0].text.trim().to_string(),
            Err(e) => {
                log::warn!(
                    "seed {}: round {round_index}: summarization failed: {e}",
                    task.id
                );
                rounds.push(RoundRecord {
                    round_index,
                    input_description: current_description.clone(),
                    generated_codes: generated,
                    chosen_code: chosen,
                    summary_description: None,
                });
                return Ok(ChainRecord {
                    seed_id: task.id.clone(),
                    rounds,
                    terminal_reason: TerminalReason::BackendError,
                });
            }
        };

        rounds.push(RoundRecord {
            round_index,
            input_description: current_description.clone(),
            generated_codes: generated,
            chosen_code: chosen,
            summary_description: Some(summary.clone()),
        });
        current_description = summary;
    }

    Ok(ChainRecord {
        seed_id: task.id.clone(),
        rounds,
        terminal_reason: TerminalReason::Completed,
    })
}

/// Per-seed harvested pool of validated candidates.
#[derive(Debug, Clone, Default)]
pub struct SeedPool {
    pub candidates: Vec<Candidate>,
    /// Parallel to `candidates`: true when an earlier pool entry has the
    /// same normalized code text. Duplicates stay in the pool — their
    /// multiplicity carries marginal frequency — but are flagged for
    /// analysis.
    pub duplicate_flags: Vec<bool>,
}

impl SeedPool {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn push(&mut self, candidate: Candidate, seen: &mut Vec<String>) {
        let normalized = normalize_code(&candidate.code);
        let duplicate = seen.contains(&normalized);
        if !duplicate {
            seen.push(normalized);
        }
        self.candidates.push(candidate);
        self.duplicate_flags.push(duplicate);
    }
}

fn normalize_code(code: &str) -> String {
    code.lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

/// Collect every passing candidate per seed from the chains, plus passing
/// rejection-sampling candidates when `include_rft_pool` is set. Seeds with
/// zero passing codes get an empty pool; the caller excludes them from the
/// iteration's output and logs the exclusion.
pub fn harvest_pool(
    chains: &[ChainRecord],
    include_rft_pool: bool,
    rft_candidates: &[Candidate],
) -> BTreeMap<String, SeedPool> {
    let mut pools: BTreeMap<String, SeedPool> = BTreeMap::new();
    let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for chain in chains {
        let pool = pools.entry(chain.seed_id.clone()).or_default();
        let seen = seen.entry(chain.seed_id.clone()).or_default();
        for candidate in chain.passing_candidates() {
            pool.push(candidate.clone(), seen);
        }
    }
    if include_rft_pool {
        for candidate in rft_candidates {
            if !candidate.passed() {
                continue;
            }
            let pool = pools.entry(candidate.seed_id.clone()).or_default();
            let seen = seen.entry(candidate.seed_id.clone()).or_default();
            pool.push(candidate.clone(), seen);
        }
    }
    pools
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockConfig};
    use crate::config::RunConfig;
    use crate::model::{Comparison, PassReport, TestCase, TestOutcome};
    use crate::prompts::SummaryExample;
    use crate::sandbox::SandboxLimits;

    fn task() -> SeedTask {
        SeedTask {
            id: "mbpp-s-1".into(),
            description:
                "Write a python function to find the first repeated character in a given string."
                    .into(),
            entry_point: "first_repeated_char".into(),
            signature: "def first_repeated_char(str1):".into(),
            tests: vec![
                TestCase {
                    call_expression: "first_repeated_char(\"abcabc\")".into(),
                    expected: "\"a\"".into(),
                    comparison: Comparison::Equality,
                },
                TestCase {
                    call_expression: "first_repeated_char(\"abc\")".into(),
                    expected: "None".into(),
                    comparison: Comparison::Equality,
                },
            ],
            examples_for_prompt: None,
        }
    }

    fn summary_pool() -> SummaryExamplePool {
        SummaryExamplePool::new(vec![SummaryExample {
            code: "def add(a, b):\n    return a + b".into(),
            description: "Add two numbers.".into(),
        }])
    }

    fn test_config(n_rounds: u32, width: u32) -> RunConfig {
        let mut config = RunConfig::default();
        config.n_rounds = n_rounds;
        config.per_step_width = width;
        config.max_tokens = 512;
        config
    }

    fn test_sandbox() -> Sandbox {
        Sandbox::new("python3", SandboxLimits::default(), 2).unwrap()
    }

    #[test]
    fn happy_path_chain_has_choices_and_summaries() {
        let backend = MockBackend::new(MockConfig {
            seed_pass_rate: 1.0,
            derived_pass_rate: 1.0,
            ..MockConfig::default()
        });
        let config = test_config(2, 3);
        let chain = run_chain(&task(), &config, &backend, &test_sandbox(), &summary_pool())
            .unwrap();
        assert_eq!(chain.terminal_reason, TerminalReason::Completed);
        assert_eq!(chain.rounds.len(), 2);
        for round in &chain.rounds {
            assert!(round.chosen_code.is_some());
            assert!(round.summary_description.is_some());
            assert_eq!(round.generated_codes.len(), 3);
        }
        // Round 2 consumed round 1's summary.
        assert_eq!(
            chain.rounds[1].input_description,
            *chain.rounds[0].summary_description.as_ref().unwrap()
        );
    }

    #[test]
    fn assemble_truncates_at_dedent() {
        let prompt = "def f(x):\n    \"\"\" doc\n    \"\"\"";
        let completion = "\n    return x\n\ndef next_function():\n    pass";
        let code = assemble_candidate_code(prompt, completion);
        assert!(code.ends_with("    return x"));
        assert!(!code.contains("next_function"));
    }

    #[test]
    fn budget_is_rounds_times_width() {
        let backend = MockBackend::new(MockConfig {
            seed_pass_rate: 0.6,
            derived_pass_rate: 0.4,
            ..MockConfig::default()
        });
        let config = test_config(4, 3);
        let chain = run_chain(&task(), &config, &backend, &test_sandbox(), &summary_pool())
            .unwrap();
        let total: usize = chain.rounds.iter().map(|r| r.generated_codes.len()).sum();
        assert_eq!(total, 12);
    }

    #[test]
    fn chain_replay_is_byte_identical() {
        let config = test_config(3, 2);
        let make = || {
            let backend = MockBackend::new(MockConfig::default());
            run_chain(&task(), &config, &backend, &test_sandbox(), &summary_pool()).unwrap()
        };
        let mut a = make();
        let mut b = make();
        // Wall times vary run to run; everything else must match exactly.
        for chain in [&mut a, &mut b] {
            for round in &mut chain.rounds {
                for candidate in &mut round.generated_codes {
                    if let Some(report) = &mut candidate.pass_report {
                        report.wall_time_ms = 0;
                    }
                }
            }
        }
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    fn passing_candidate(seed_id: &str, code: &str, origin: Origin) -> Candidate {
        Candidate {
            code: code.into(),
            seed_id: seed_id.into(),
            source_description: "d".into(),
            round: 0,
            origin,
            pass_report: Some(PassReport::from_outcomes(
                vec![TestOutcome {
                    passed: true,
                    failure_kind: None,
                    detail: None,
                }],
                1,
            )),
            token_logprobs: None,
            perplexity: None,
        }
    }

    #[test]
    fn harvest_unions_chain_and_rft_candidates() {
        let chain = ChainRecord {
            seed_id: "s".into(),
            rounds: vec![RoundRecord {
                round_index: 1,
                input_description: "d".into(),
                generated_codes: vec![
                    passing_candidate("s", "a", Origin::Gift),
                    Candidate {
                        pass_report: Some(PassReport::from_outcomes(
                            vec![TestOutcome {
                                passed: false,
                                failure_kind: None,
                                detail: None,
                            }],
                            1,
                        )),
                        ..passing_candidate("s", "b", Origin::Gift)
                    },
                ],
                chosen_code: Some(0),
                summary_description: None,
            }],
            terminal_reason: TerminalReason::Completed,
        };
        let rft: Vec<Candidate> = (0..10)
            .map(|i| passing_candidate("s", &format!("rft{i}"), Origin::Rft))
            .collect();

        let without = harvest_pool(&[chain.clone()], false, &rft);
        assert_eq!(without["s"].candidates.len(), 1);

        let with = harvest_pool(&[chain], true, &rft);
        assert_eq!(with["s"].candidates.len(), 11);
    }

    #[test]
    fn harvest_flags_duplicates_but_keeps_them() {
        let chain = ChainRecord {
            seed_id: "s".into(),
            rounds: vec![RoundRecord {
                round_index: 1,
                input_description: "d".into(),
                generated_codes: vec![
                    passing_candidate("s", "same code", Origin::Gift),
                    passing_candidate("s", "same code  ", Origin::Gift),
                ],
                chosen_code: Some(0),
                summary_description: None,
            }],
            terminal_reason: TerminalReason::Completed,
        };
        let pools = harvest_pool(&[chain], false, &[]);
        let pool = &pools["s"];
        assert_eq!(pool.candidates.len(), 2);
        assert_eq!(pool.duplicate_flags, vec![false, true]);
    }

    #[test]
    fn empty_pool_for_seed_with_no_passing_codes() {
        let chain = ChainRecord {
            seed_id: "s".into(),
            rounds: vec![],
            terminal_reason: TerminalReason::Completed,
        };
        let pools = harvest_pool(&[chain], false, &[]);
        assert!(pools["s"].is_empty());
    }
}
