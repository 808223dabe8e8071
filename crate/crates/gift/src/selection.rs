//! Perplexity-weighted code selection and training-record emission.
//!
//! Pools of validated codes are long-tailed: frequent (head) codes are
//! oversampled and rare (tail) codes undersampled, and iterative
//! self-training amplifies the skew. Selection counteracts it by weighting
//! each code with a softmax over perplexities at temperature `T`: positive
//! `T` favors high-perplexity (tail) codes, negative `T` favors the head.
//! Exactly `K` codes are kept per seed — weighted draws without replacement
//! when the pool is large enough, full inclusion plus weighted resampling
//! when it is not — so easy seeds cannot dominate the dataset by volume.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::model::{Candidate, ChainRecord, PairingMode, SeedTask, SftRecord};
use crate::prompts::render_codegen_prompt;

/// Descriptions added per seed in `one_pair`/`mix_pair` modes.
pub const EXTRA_DESCRIPTIONS: usize = 8;
/// Codes paired with each added description in `mix_pair` mode.
pub const MIX_PAIR_CODES: usize = 8;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("token logprob list must be nonempty")]
    EmptyLogprobs,
    #[error("weight temperature must be nonzero")]
    ZeroTemperature,
    #[error("ppl list must be nonempty")]
    EmptyPpls,
    #[error("seed {seed_id}: selection pool is empty; seed excluded from this iteration")]
    EmptyPool { seed_id: String },
    #[error("seed {seed_id}: candidate did not pass tests and cannot enter a weighted pool")]
    UnvalidatedCandidate { seed_id: String },
    #[error("pairing mode {mode} requires chain provenance")]
    MissingProvenance { mode: &'static str },
    #[error("seed {seed_id}: no candidate has a usable perplexity")]
    NoUsablePerplexity { seed_id: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
}

/// `exp(-(1/l) * sum(logprobs))`. At least 1 whenever all logprobs are
/// nonpositive.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64, SelectionError> {
    if token_logprobs.is_empty() {
        return Err(SelectionError::EmptyLogprobs);
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Softmax of `ppls / T`, computed in log space with max subtraction.
/// Monotone increasing in ppl for `T > 0`, decreasing for `T < 0`.
pub fn softmax_weights(ppls: &[f64], temperature: f64) -> Result<Vec<f64>, SelectionError> {
    if ppls.is_empty() {
        return Err(SelectionError::EmptyPpls);
    }
    if temperature == 0.0 {
        return Err(SelectionError::ZeroTemperature);
    }
    let scaled: Vec<f64> = ppls.iter().map(|p| p / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.iter().map(|e| e / total).collect())
}

/// Perplexity of a candidate's code conditioned on the seed description —
/// the description it will be paired with for training, not necessarily the
/// one it was generated from. The result (and the logprobs that produced
/// it) is cached on the candidate; a second call is a cache hit.
pub fn conditioned_perplexity(
    candidate: &mut Candidate,
    seed: &SeedTask,
    backend: &dyn Backend,
) -> Result<f64, SelectionError> {
    if let Some(ppl) = candidate.perplexity {
        return Ok(ppl);
    }
    let context = render_codegen_prompt(&seed.description, seed)?;
    let logprobs = backend.score(&context, &candidate.code)?;
    let ppl = perplexity(&logprobs)?;
    candidate.token_logprobs = Some(logprobs);
    candidate.perplexity = Some(ppl);
    Ok(ppl)
}

/// One pool entry: a validated candidate with its perplexity and softmax
/// weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedEntry {
    pub candidate: Candidate,
    pub ppl: f64,
    pub weight: f64,
}

/// Per-seed weighted pool. Weights sum to 1 and every entry passed all
/// tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedPool {
    pub seed_id: String,
    pub entries: Vec<WeightedEntry>,
    pub temperature: f64,
}

impl WeightedPool {
    /// Build a pool from (candidate, ppl) pairs, computing weights.
    pub fn build(
        seed_id: &str,
        scored: Vec<(Candidate, f64)>,
        temperature: f64,
    ) -> Result<Self, SelectionError> {
        if scored.is_empty() {
            return Err(SelectionError::EmptyPool {
                seed_id: seed_id.into(),
            });
        }
        for (candidate, _) in &scored {
            if !candidate.passed() {
                return Err(SelectionError::UnvalidatedCandidate {
                    seed_id: seed_id.into(),
                });
            }
        }
        let ppls: Vec<f64> = scored.iter().map(|(_, p)| *p).collect();
        let weights = softmax_weights(&ppls, temperature)?;
        let entries = scored
            .into_iter()
            .zip(weights)
            .map(|((candidate, ppl), weight)| WeightedEntry {
                candidate,
                ppl,
                weight,
            })
            .collect();
        let pool = WeightedPool {
            seed_id: seed_id.into(),
            entries,
            temperature,
        };
        debug_assert!(pool.weights_normalized());
        Ok(pool)
    }

    pub fn weights_normalized(&self) -> bool {
        let sum: f64 = self.entries.iter().map(|e| e.weight).sum();
        (sum - 1.0).abs() <= WEIGHT_SUM_TOL
    }

    pub fn ppls(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.ppl).collect()
    }
}

/// Score every pooled candidate against the seed description and build the
/// weighted pool.
///
/// When the backend lacks scoring support, a candidate falls back to its
/// generation-time logprobs — but only if it was generated from the seed
/// description itself, so the conditioning still matches. Candidates with
/// no usable logprobs get the pool median perplexity; their stale logprobs
/// are dropped so the persisted record stays internally consistent. Both
/// fallbacks are logged loudly.
pub fn weigh_pool(
    seed: &SeedTask,
    candidates: Vec<Candidate>,
    backend: &dyn Backend,
    temperature: f64,
) -> Result<WeightedPool, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::EmptyPool {
            seed_id: seed.id.clone(),
        });
    }
    let mut known: Vec<(Candidate, f64)> = Vec::new();
    let mut pending: Vec<Candidate> = Vec::new();
    for mut candidate in candidates {
        match conditioned_perplexity(&mut candidate, seed, backend) {
            Ok(ppl) => known.push((candidate, ppl)),
            Err(SelectionError::Backend(BackendError::Capability(reason))) => {
                if candidate.source_description == seed.description {
                    if let Some(logprobs) = candidate.token_logprobs.clone() {
                        let ppl = perplexity(&logprobs)?;
                        log::warn!(
                            "seed {}: scoring unsupported ({reason}); using generation-time logprobs",
                            seed.id
                        );
                        candidate.perplexity = Some(ppl);
                        known.push((candidate, ppl));
                        continue;
                    }
                }
                pending.push(candidate);
            }
            Err(other) => return Err(other),
        }
    }
    if known.is_empty() {
        return Err(SelectionError::NoUsablePerplexity {
            seed_id: seed.id.clone(),
        });
    }
    if !pending.is_empty() {
        let mut ppls: Vec<f64> = known.iter().map(|(_, p)| *p).collect();
        ppls.sort_by(|a, b| a.partial_cmp(b).expect("ppls are finite"));
        let median = if ppls.len() % 2 == 1 {
            ppls[ppls.len() / 2]
        } else {
            0.5 * (ppls[ppls.len() / 2 - 1] + ppls[ppls.len() / 2])
        };
        log::warn!(
            "seed {}: {} candidate(s) have no usable logprobs; assigning pool median ppl {median}",
            seed.id,
            pending.len()
        );
        for mut candidate in pending {
            // Stale logprobs from another conditioning would contradict the
            // assigned median.
            candidate.token_logprobs = None;
            candidate.perplexity = Some(median);
            known.push((candidate, median));
        }
    }
    WeightedPool::build(&seed.id, known, temperature)
}

fn weighted_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u: f64 = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Select `k` codes from the pool by weighted random sampling, in draw
/// order.
///
/// Surplus pools (`|pool| >= k`) use successive draws without replacement —
/// draw, remove, renormalize — so the result is `k` distinct entries.
/// Deficit pools include every entry once, then top up with weighted draws
/// with replacement.
pub fn select_k<R: Rng>(
    pool: &WeightedPool,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Candidate>, SelectionError> {
    if pool.entries.is_empty() {
        return Err(SelectionError::EmptyPool {
            seed_id: pool.seed_id.clone(),
        });
    }
    let mut selected = Vec::with_capacity(k);
    if pool.entries.len() >= k {
        let mut remaining: Vec<(usize, f64)> = pool
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.weight))
            .collect();
        for _ in 0..k {
            let weights: Vec<f64> = remaining.iter().map(|(_, w)| *w).collect();
            let pick = weighted_index(&weights, rng);
            let (index, _) = remaining.remove(pick);
            selected.push(pool.entries[index].candidate.clone());
        }
    } else {
        for entry in &pool.entries {
            selected.push(entry.candidate.clone());
        }
        let weights: Vec<f64> = pool.entries.iter().map(|e| e.weight).collect();
        for _ in 0..k - pool.entries.len() {
            let pick = weighted_index(&weights, rng);
            selected.push(pool.entries[pick].candidate.clone());
        }
    }
    Ok(selected)
}

/// Chain-derived material needed by the `one_pair` and `mix_pair` modes:
/// which self-generated descriptions led to passing codes, and the seed's
/// full validated pool.
#[derive(Debug, Clone, Default)]
pub struct ChainProvenance {
    /// (self-generated description, the passing code generated from it),
    /// deduplicated by description, in chain order.
    pub pairs: Vec<(String, Candidate)>,
    /// Every validated candidate harvested for the seed.
    pub pool: Vec<Candidate>,
}

impl ChainProvenance {
    /// Extract provenance from a chain. Round 1 consumes the seed
    /// description, so only rounds >= 2 contribute self-generated
    /// descriptions; a description qualifies when its round produced a
    /// passing chosen code.
    pub fn from_chain(chain: &ChainRecord, pool: Vec<Candidate>) -> Self {
        let mut pairs: Vec<(String, Candidate)> = Vec::new();
        for round in chain.rounds.iter().skip(1) {
            if let Some(chosen) = round.chosen_candidate() {
                if pairs.iter().any(|(d, _)| d == &round.input_description) {
                    continue;
                }
                pairs.push((round.input_description.clone(), chosen.clone()));
            }
        }
        ChainProvenance { pairs, pool }
    }
}

/// Emit the training records for one seed from its selected codes.
///
/// `seed_only` pairs every selected code with the seed description
/// verbatim. `one_pair` additionally pairs up to [`EXTRA_DESCRIPTIONS`]
/// qualifying self-generated descriptions with their own codes;
/// `mix_pair` pairs each such description with [`MIX_PAIR_CODES`] codes
/// drawn uniformly from the seed's pool.
pub fn emit_sft<R: Rng>(
    seed: &SeedTask,
    selected: &[Candidate],
    mode: PairingMode,
    iteration: u32,
    provenance: Option<&ChainProvenance>,
    rng: &mut R,
) -> Result<Vec<SftRecord>, SelectionError> {
    let mut records: Vec<SftRecord> = selected
        .iter()
        .map(|candidate| SftRecord {
            description: seed.description.clone(),
            code: candidate.code.clone(),
            seed_id: seed.id.clone(),
            pairing_mode: mode,
            candidate_origin: candidate.origin,
            iteration,
        })
        .collect();

    if mode == PairingMode::SeedOnly {
        return Ok(records);
    }
    let provenance = provenance.ok_or(SelectionError::MissingProvenance {
        mode: match mode {
            PairingMode::OnePair => "one_pair",
            PairingMode::MixPair => "mix_pair",
            PairingMode::SeedOnly => unreachable!(),
        },
    })?;

    let descriptions = provenance.pairs.iter().take(EXTRA_DESCRIPTIONS);
    match mode {
        PairingMode::OnePair => {
            for (description, candidate) in descriptions {
                records.push(SftRecord {
                    description: description.clone(),
                    code: candidate.code.clone(),
                    seed_id: seed.id.clone(),
                    pairing_mode: mode,
                    candidate_origin: candidate.origin,
                    iteration,
                });
            }
        }
        PairingMode::MixPair => {
            if provenance.pool.is_empty() {
                return Err(SelectionError::EmptyPool {
                    seed_id: seed.id.clone(),
                });
            }
            for (description, _) in descriptions {
                for _ in 0..MIX_PAIR_CODES {
                    let candidate = &provenance.pool[rng.gen_range(0..provenance.pool.len())];
                    records.push(SftRecord {
                        description: description.clone(),
                        code: candidate.code.clone(),
                        seed_id: seed.id.clone(),
                        pairing_mode: mode,
                        candidate_origin: candidate.origin,
                        iteration,
                    });
                }
            }
        }
        PairingMode::SeedOnly => unreachable!(),
    }
    Ok(records)
}
