//! Prompt rendering for code generation, code summarization, and
//! description rewriting.
//!
//! The code-generation prompt is a completion-style function head plus a
//! docstring carrying the task description and optional worked examples;
//! backends continue it with the function body. The summarization prompt
//! shows one in-context (code, description) example followed by the target
//! code and a trailing cue. Rendering is deterministic byte-for-byte given
//! the same inputs and rng state.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SeedTask;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("description must be nonempty")]
    EmptyDescription,
    #[error("summary example pool must be nonempty")]
    EmptyPool,
}

/// One in-context example for the summarization prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryExample {
    pub code: String,
    pub description: String,
}

/// Pool of in-context examples for summarization prompts. Supplied as a
/// repo fixture for tests; `gift pool bootstrap` builds one from a backend.
#[derive(Debug, Clone, Default)]
pub struct SummaryExamplePool {
    pub examples: Vec<SummaryExample>,
}

impl SummaryExamplePool {
    pub fn new(examples: Vec<SummaryExample>) -> Self {
        SummaryExamplePool { examples }
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Load from a line-delimited file of `{"code": ..., "description": ...}`
    /// records.
    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut examples = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let example: SummaryExample = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("summary pool line {}: {e}", idx + 1),
                )
            })?;
            examples.push(example);
        }
        Ok(SummaryExamplePool { examples })
    }
}

/// Triple-quote sequences inside a docstring would terminate it early.
fn sanitize_docstring(text: &str) -> String {
    text.replace("\"\"\"", "'''")
}

/// Render the code-generation prompt: function head, docstring with the
/// given description, and the task's worked examples when present. The
/// description may be the seed description or a chain summary; everything
/// else comes from the task and is invariant across rounds.
pub fn render_codegen_prompt(description: &str, task: &SeedTask) -> Result<String, PromptError> {
    if description.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    let mut prompt = String::new();
    prompt.push_str(task.signature.trim_end());
    prompt.push('\n');
    prompt.push_str("    \"\"\" ");
    prompt.push_str(&sanitize_docstring(description.trim()));
    prompt.push('\n');
    if let Some(examples) = &task.examples_for_prompt {
        for example in examples {
            prompt.push_str("    >>> ");
            prompt.push_str(&sanitize_docstring(&example.call));
            prompt.push('\n');
            prompt.push_str("    ");
            prompt.push_str(&sanitize_docstring(&example.output));
            prompt.push('\n');
        }
    }
    prompt.push_str("    \"\"\"");
    Ok(prompt)
}

/// The cue line a summarization prompt ends with; backends complete it
/// with the description.
pub const SUMMARY_CUE: &str = "###Description of the given code:";

/// Render the summarization prompt: one pool example chosen by the rng,
/// then the target code and the trailing cue.
pub fn render_summarization_prompt<R: Rng>(
    code: &str,
    pool: &SummaryExamplePool,
    rng: &mut R,
) -> Result<String, PromptError> {
    if pool.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    let example = &pool.examples[rng.gen_range(0..pool.examples.len())];
    let mut prompt = String::new();
    prompt.push_str("###Code:\n");
    prompt.push_str(example.code.trim_end());
    prompt.push('\n');
    prompt.push_str(SUMMARY_CUE);
    prompt.push('\n');
    prompt.push_str(example.description.trim());
    prompt.push_str("\n\n\n");
    prompt.push_str("###Code:\n");
    prompt.push_str(code.trim_end());
    prompt.push('\n');
    prompt.push_str(SUMMARY_CUE);
    prompt.push('\n');
    Ok(prompt)
}

/// Render the zero-shot summarization prompt used when bootstrapping an
/// example pool: no in-context example, just the code and the cue.
pub fn render_zero_shot_summary_prompt(code: &str) -> String {
    let mut prompt = String::new();
    prompt.push_str("###Code:\n");
    prompt.push_str(code.trim_end());
    prompt.push('\n');
    prompt.push_str(SUMMARY_CUE);
    prompt.push('\n');
    prompt
}

/// Render the description-rewrite prompt used by the rewrite baseline.
pub fn render_rewrite_prompt(description: &str) -> Result<String, PromptError> {
    if description.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    Ok(format!(
        "Rewrite the given Description\n###Description:\n{}\n###New Description:\n",
        description.trim()
    ))
}
