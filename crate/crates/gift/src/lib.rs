//! Self-training data synthesis for code generation.
//!
//! The pipeline turns a seed dataset of natural-language task descriptions
//! (each with an entry point and executable test cases) into a supervised
//! fine-tuning dataset:
//!
//! 1. For every seed description, a translation chain alternates between
//!    code generation and code summarization against an inference backend,
//!    so that collected codes approximate the marginal code distribution of
//!    the task's description-code space rather than the conditional
//!    distribution of the single seed wording ([`gibbs`]).
//! 2. Every generated code is executed against the task's test cases in an
//!    isolated subprocess; only codes passing all tests enter the candidate
//!    pool ([`sandbox`]).
//! 3. Pooled codes are scored by perplexity under the backend and selected
//!    with temperature-scaled softmax weights, favoring rare (tail) codes;
//!    a fixed number `K` is kept per seed, resampling on deficit
//!    ([`selection`]).
//! 4. Selected codes are paired with the seed description (or with
//!    self-generated descriptions, depending on pairing mode) and written as
//!    line-delimited training records ([`records`]).
//!
//! Rejection-sampling baselines under the same generation budget live in
//! [`baselines`], analysis statistics in [`metrics`], and an
//! exact-arithmetic lab for the distributional claims behind the chain
//! design in [`theory`].

pub mod backend;
pub mod baselines;
pub mod config;
pub mod gibbs;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod records;
pub mod sandbox;
pub mod selection;
pub mod theory;

pub use config::RunConfig;
pub use model::{
    Candidate, ChainRecord, Origin, PairingMode, PassReport, RoundRecord, SeedTask, SftRecord,
    TestCase,
};
