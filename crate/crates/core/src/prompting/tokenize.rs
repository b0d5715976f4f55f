//! Token counting behind a small registry.
//!
//! Budgets are expressed in tokens of the configured tokenizer. The default
//! `heuristic` tokenizer splits whitespace-separated chunks further at
//! punctuation: every maximal run of alphanumeric characters is one token and
//! every other non-whitespace character is a token of its own. No token spans
//! whitespace, so the count of a concatenation at a whitespace boundary is the
//! sum of the parts.

use super::PromptError;

pub const DEFAULT_TOKENIZER: &str = "heuristic";

pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Heuristic;

impl Tokenizer for Heuristic {
    fn id(&self) -> &str {
        "heuristic"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace()
            .map(|chunk| {
                chunk
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|run| !run.is_empty())
                    .count()
                    + chunk.chars().filter(|c| !c.is_alphanumeric()).count()
            })
            .sum()
    }
}

/// One token per whitespace-separated chunk.
#[derive(Debug, Clone, Copy, Default)]
pub struct Whitespace;

impl Tokenizer for Whitespace {
    fn id(&self) -> &str {
        "whitespace"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn tokenizer(id: &str) -> Result<&'static dyn Tokenizer, PromptError> {
    static HEURISTIC: Heuristic = Heuristic;
    static WHITESPACE: Whitespace = Whitespace;
    match id {
        "heuristic" => Ok(&HEURISTIC),
        "whitespace" => Ok(&WHITESPACE),
        other => Err(PromptError::UnknownTokenizer(other.to_string())),
    }
}

pub fn count_tokens(text: &str, tokenizer_id: &str) -> Result<usize, PromptError> {
    Ok(tokenizer(tokenizer_id)?.count(text))
}
