//! Source/target serialization for sequence-to-sequence writers.
//!
//! The source is a flat list of segments, each followed by the separator and a
//! space:
//!
//! ```text
//! <entity></s> <statement></s> ... DIALOG CONTEXT:</s> <statement></s> ...
//! KNOW BY THE END OF THE DIALOG:</s> <statement></s> ... DIALOG PARTICIPANTS:</s>
//! <name></s> ... HISTORY: > <speaker>: <text> > <speaker>: <text></s>
//! ```
//!
//! Biographies come first (non-participants, then participants) so that, when
//! the window is exceeded, whole passages are dropped from the front before
//! any word-level left truncation happens. The target is
//! `[<label> fact: <statement>, ...] > <speaker>: <text></s>`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::render::{bio_order, fact_line, quest_order, QuestPart, CONTEXT_HEADER, FACT_MARKER, KNOW_HEADER, PARTICIPANTS_HEADER};
use super::tokenize::tokenizer;
use super::{PromptError, DEFAULT_SL_WINDOW, DEFAULT_TOKENIZER};
use crate::linearize::GenerationTask;
use crate::model::{DialogueSpec, FactRef, UtteranceNode};

pub const DEFAULT_SEPARATOR: &str = "</s>";
pub const HISTORY_HEADER: &str = "HISTORY:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlConfig {
    pub window: usize,
    pub tokenizer: String,
    pub separator: String,
}

impl Default for SlConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_SL_WINDOW,
            tokenizer: DEFAULT_TOKENIZER.to_string(),
            separator: DEFAULT_SEPARATOR.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlSource {
    pub text: String,
    pub token_count: usize,
    /// Entities whose passages were removed, in removal order.
    pub dropped_bios: Vec<String>,
    pub left_truncated: bool,
}

fn segments(spec: &DialogueSpec, history: &[&UtteranceNode], skip_bios: usize) -> Vec<String> {
    let mut out = Vec::new();
    for bio in bio_order(spec).into_iter().skip(skip_bios) {
        out.push(bio.entity.clone());
        out.extend(bio.statements.iter().map(|s| s.text.clone()));
    }
    let quest = quest_order(spec);
    let context: Vec<_> = quest.iter().filter(|(p, _)| matches!(p, QuestPart::Context { .. })).collect();
    let know: Vec<_> = quest.iter().filter(|(p, _)| *p == QuestPart::Know).collect();
    for (header, lists) in [(CONTEXT_HEADER, context), (KNOW_HEADER, know)] {
        if !lists.is_empty() {
            out.push(header.to_string());
            out.extend(lists.iter().flat_map(|(_, s)| s.iter().map(|st| st.text.clone())));
        }
    }
    out.push(PARTICIPANTS_HEADER.to_string());
    out.extend(spec.participants.iter().map(|p| p.name.clone()));
    let mut hist = HISTORY_HEADER.to_string();
    for n in history {
        hist.push(' ');
        hist.push_str(&n.line());
    }
    out.push(hist);
    out
}

fn join(segments: &[String], sep: &str) -> String {
    segments.iter().map(|s| format!("{s}{sep}")).collect::<Vec<_>>().join(" ")
}

/// `[B, Q, P, H]` source text fitted to the window.
pub fn build_sl_source(task: &GenerationTask, config: &SlConfig) -> Result<SlSource, PromptError> {
    if config.window == 0 {
        return Err(PromptError::ZeroBudget);
    }
    let tok = tokenizer(&config.tokenizer)?;
    let history = task.history_nodes();
    let order = bio_order(&task.spec);
    let mut skip = 0;
    let mut text = join(&segments(&task.spec, &history, 0), &config.separator);
    while tok.count(&text) > config.window && skip < order.len() {
        skip += 1;
        text = join(&segments(&task.spec, &history, skip), &config.separator);
    }
    let mut left_truncated = false;
    if tok.count(&text) > config.window {
        left_truncated = true;
        let words: Vec<&str> = text.split(' ').collect();
        let mut start = 0;
        while start < words.len() && tok.count(&words[start..].join(" ")) > config.window {
            start += 1;
        }
        text = words[start..].join(" ");
    }
    Ok(SlSource {
        token_count: tok.count(&text),
        text,
        dropped_bios: order[..skip].iter().map(|b| b.entity.clone()).collect(),
        left_truncated,
    })
}

/// Gold target, with its support facts first when `ks` is set.
pub fn build_sl_target(task: &GenerationTask, ks: bool, separator: &str) -> Result<String, PromptError> {
    let node = task.gold_target.as_ref().ok_or(PromptError::NoGoldFacts)?;
    let mut out = String::new();
    if ks {
        let facts: Vec<String> = node
            .support_facts
            .iter()
            .map(|f| fact_line(&task.spec, f))
            .collect::<Result<_, _>>()?;
        if !facts.is_empty() {
            out.push_str(&facts.join(", "));
            out.push(' ');
        }
    }
    out.push_str(&node.line());
    out.push_str(separator);
    Ok(out)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SlParseError {
    #[error("no utterance in target")]
    NoUtterance,
    #[error("unresolvable fact item at `{0}`")]
    UnresolvedFact(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlTarget {
    pub facts: Vec<FactRef>,
    pub speaker: String,
    pub text: String,
}

/// Inverse of [`build_sl_target`]. Fact items are matched against the spec
/// by label and the longest statement text that fits, since statements may
/// themselves contain `", "`.
pub fn parse_sl_target(target: &str, spec: &DialogueSpec, separator: &str) -> Result<SlTarget, SlParseError> {
    let body = target.trim_end();
    let body = body.strip_suffix(separator).unwrap_or(body);
    let mut rest = body;
    let mut facts = Vec::new();
    while !rest.starts_with("> ") {
        let (label, after) = rest.split_once(FACT_MARKER).ok_or(SlParseError::NoUtterance)?;
        let best = spec
            .knowledge()
            .into_iter()
            .filter(|k| k.label == label)
            .flat_map(|k| k.statements.iter())
            .filter(|s| {
                after
                    .strip_prefix(s.text.as_str())
                    .is_some_and(|r| r.starts_with(", ") || r.starts_with(" > "))
            })
            .max_by_key(|s| s.text.len())
            .ok_or_else(|| SlParseError::UnresolvedFact(rest.chars().take(40).collect()))?;
        facts.push(best.fact_ref());
        rest = &after[best.text.len()..];
        rest = rest.strip_prefix(", ").or_else(|| rest.strip_prefix(' ')).unwrap_or(rest);
    }
    let line = rest.strip_prefix("> ").ok_or(SlParseError::NoUtterance)?;
    let (speaker, text) = line.split_once(": ").ok_or(SlParseError::NoUtterance)?;
    Ok(SlTarget {
        facts,
        speaker: speaker.to_string(),
        text: text.to_string(),
    })
}
