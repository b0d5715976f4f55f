//! Prompt construction.
//!
//! Two families of output:
//!
//! * completion-style prompts for in-context learning ([`build_icl_prompt`]),
//!   rendered with the section template in [`render`] and filled with
//!   retrieved exemplars up to a token budget;
//! * source/target pairs for sequence-to-sequence models ([`sl`]).
//!
//! The template is fixed byte for byte. A dialogue block reads:
//!
//! ```text
//! FACTS:
//! <entity>
//!    <statement>
//!
//! DIALOG CONTEXT:
//! <in-objective log statement>
//!    <in-objective walkthrough statement>
//!
//! KNOW BY THE END OF THE DIALOG:
//! <out-objective log statement>
//!
//! DIALOG PARTICIPANTS:
//! <name>, <name>
//!
//! DIALOG:
//! > <speaker>: <text>
//! ```
//!
//! Empty sections are left out. In knowledge-selection modes each history
//! utterance becomes a block of `<label> fact: <statement>` lines followed by
//! `utterance: > <speaker>: <text>`, blocks separated by blank lines.
//! Few-shot exemplars are separated by a line holding `---` with a blank line
//! on each side.

mod icl;
pub mod render;
pub mod sl;
pub mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::FactRef;

pub use icl::{build_icl_prompt, ExemplarPool, EXEMPLAR_SEPARATOR};
pub use render::{
    build_ks_history, render_dialogue_block, render_task_block, sample_one_fact, select_oracle_facts,
};
pub use tokenize::{count_tokens, tokenizer, Tokenizer, DEFAULT_TOKENIZER};

pub const DEFAULT_ICL_BUDGET: usize = 4000;
pub const DEFAULT_SL_WINDOW: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("irreducible overflow: task block needs {needed} tokens, budget is {budget}")]
    IrreducibleOverflow { needed: usize, budget: usize },
    #[error("unresolvable fact {0}")]
    UnresolvableFact(FactRef),
    #[error("no gold facts")]
    NoGoldFacts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Participants and history only.
    Vanilla,
    /// Adds quest statements.
    QuestOnly,
    /// Adds biographies.
    Full,
    /// Full, with knowledge-selection histories.
    Ks,
    /// Ks plus one sampled gold fact for the target.
    KsOneFact,
    /// Ks plus every gold fact for the target.
    KsOracle,
}

impl PromptMode {
    pub const ALL: [PromptMode; 6] = [
        PromptMode::Vanilla,
        PromptMode::QuestOnly,
        PromptMode::Full,
        PromptMode::Ks,
        PromptMode::KsOneFact,
        PromptMode::KsOracle,
    ];

    pub fn shows_bios(self) -> bool {
        !matches!(self, PromptMode::Vanilla | PromptMode::QuestOnly)
    }

    pub fn shows_quest(self) -> bool {
        self != PromptMode::Vanilla
    }

    pub fn is_ks(self) -> bool {
        matches!(self, PromptMode::Ks | PromptMode::KsOneFact | PromptMode::KsOracle)
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Vanilla => "vanilla",
            PromptMode::QuestOnly => "quest_only",
            PromptMode::Full => "full",
            PromptMode::Ks => "ks",
            PromptMode::KsOneFact => "ks_one_fact",
            PromptMode::KsOracle => "ks_oracle",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown prompt mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub token_budget: usize,
    pub tokenizer: String,
    pub allow_few_shot: bool,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            mode: PromptMode::Full,
            token_budget: DEFAULT_ICL_BUDGET,
            tokenizer: DEFAULT_TOKENIZER.to_string(),
            allow_few_shot: true,
            seed: 0,
        }
    }
}

impl PromptConfig {
    pub fn with_mode(mode: PromptMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub token_count: usize,
    /// Whole exemplars included.
    pub num_exemplars: usize,
    /// Set when task content was trimmed to fit or a partial exemplar leads.
    pub truncated: bool,
    pub partial_leading_exemplar: bool,
    /// Whole exemplars in rank order (best first).
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_exemplar_id: Option<String>,
}
