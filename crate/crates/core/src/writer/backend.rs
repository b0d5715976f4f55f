//! Completion backends.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::render::{
    CONTEXT_HEADER, DIALOG_HEADER, FACTS_HEADER, FACT_MARKER, INDENT, KNOW_HEADER, PARTICIPANTS_HEADER,
    UTTERANCE_PREFIX,
};
use crate::prompting::EXEMPLAR_SEPARATOR;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: usize = 128;
pub const DEFAULT_STOP: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            stop: vec![DEFAULT_STOP.to_string()],
            seed: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A text-completion model. Implementations must accept concurrent calls.
pub trait LmBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError>;
}

/// Deterministic offline backend.
#[derive(Debug)]
pub enum MockBackend {
    /// Writes a plausible continuation from the prompt itself: the next
    /// speaker differs from the last one and the text is a statement picked
    /// from the prompt by hashing the prompt and seed. Emits a fact line when
    /// the prompt is in knowledge-selection format.
    Synthetic,
    /// Returns `lines[seed % len]` (seed 0 when absent).
    Scripted(Vec<String>),
    /// Returns the queued responses in call order, then fails.
    Sequence(Mutex<VecDeque<Result<String, BackendError>>>),
    /// Text without any utterance marker.
    Garbage,
    /// Every call fails.
    Fail,
}

impl MockBackend {
    pub fn scripted_line(line: impl Into<String>) -> Self {
        MockBackend::Scripted(vec![line.into()])
    }

    pub fn sequence(responses: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        MockBackend::Sequence(Mutex::new(responses.into_iter().collect()))
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct PromptView<'a> {
    participants: Vec<&'a str>,
    last_speaker: Option<&'a str>,
    facts: Vec<(&'a str, &'a str)>,
    statements: Vec<&'a str>,
    ks: bool,
}

fn view(prompt: &str) -> PromptView<'_> {
    let block = prompt.rsplit(EXEMPLAR_SEPARATOR).next().unwrap_or(prompt);
    let mut participants = Vec::new();
    let mut facts = Vec::new();
    let mut statements = Vec::new();
    let mut last_speaker = None;
    let mut section = "";
    let mut entity = "";
    for line in block.lines() {
        if [FACTS_HEADER, CONTEXT_HEADER, KNOW_HEADER, PARTICIPANTS_HEADER, DIALOG_HEADER].contains(&line) {
            section = line;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match section {
            FACTS_HEADER => match line.strip_prefix(INDENT) {
                Some(stmt) => {
                    facts.push((entity, stmt));
                    statements.push(stmt);
                }
                None => entity = line,
            },
            CONTEXT_HEADER | KNOW_HEADER => statements.push(line.trim_start()),
            PARTICIPANTS_HEADER => participants = line.split(", ").collect(),
            DIALOG_HEADER => {
                let utter = line.strip_prefix(UTTERANCE_PREFIX).unwrap_or(line);
                if let Some((speaker, _)) = utter.strip_prefix("> ").and_then(|r| r.split_once(": ")) {
                    last_speaker = Some(speaker);
                }
            }
            _ => {}
        }
    }
    PromptView {
        participants,
        last_speaker,
        facts,
        statements,
        ks: block.contains(UTTERANCE_PREFIX) || block.ends_with("\n\n"),
    }
}

fn synthetic(prompt: &str, seed: u64) -> String {
    let v = view(prompt);
    let h = fnv1a(prompt.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let pick = |salt: u64, n: usize| (crate::seed::splitmix64(h ^ salt) % n as u64) as usize;
    let others: Vec<&str> = v.participants.iter().copied().filter(|p| Some(*p) != v.last_speaker).collect();
    let speaker = match (others.is_empty(), v.participants.is_empty()) {
        (false, _) => others[pick(1, others.len())],
        (true, false) => v.participants[0],
        (true, true) => "NPC",
    };
    let text = if v.statements.is_empty() {
        "Tell me more.".to_string()
    } else {
        v.statements[pick(2, v.statements.len())].to_string()
    };
    if v.ks && !v.facts.is_empty() {
        let (entity, stmt) = v.facts[pick(3, v.facts.len())];
        format!("{entity}{FACT_MARKER}{stmt}\n{UTTERANCE_PREFIX}> {speaker}: {text}\n")
    } else if v.ks {
        format!("{UTTERANCE_PREFIX}> {speaker}: {text}\n")
    } else {
        format!("> {speaker}: {text}\n")
    }
}

impl LmBackend for MockBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let seed = params.seed.unwrap_or(0);
        match self {
            MockBackend::Synthetic => Ok(synthetic(prompt, seed)),
            MockBackend::Scripted(lines) if lines.is_empty() => Err(BackendError::Config("empty script".into())),
            MockBackend::Scripted(lines) => Ok(lines[(seed % lines.len() as u64) as usize].clone()),
            MockBackend::Sequence(queue) => queue
                .lock()
                .map_err(|_| BackendError::Transport("poisoned".into()))?
                .pop_front()
                .unwrap_or_else(|| Err(BackendError::Transport("sequence exhausted".into()))),
            MockBackend::Garbage => Ok("garbage with no marker".to_string()),
            MockBackend::Fail => Err(BackendError::Transport("mock failure".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROMPT: &str = "FACTS:\nRaptidon\n   Raptidons hunt.\n\nDIALOG CONTEXT:\nFind the boy.\n\n\
                          DIALOG PARTICIPANTS:\nAgnes Needham, Player\n\nDIALOG:\n> Agnes Needham: Help!\n";

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn synthetic_alternates_and_quotes_prompt() {
        let out = MockBackend::Synthetic.complete(PROMPT, &CompletionParams::default()).unwrap();
        assert!(out.starts_with("> Player: "), "{out}");
        let text = out.trim_end().strip_prefix("> Player: ").unwrap();
        assert!(["Raptidons hunt.", "Find the boy."].contains(&text), "{text}");
        let again = MockBackend::Synthetic.complete(PROMPT, &CompletionParams::default()).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn synthetic_ks_emits_fact_line() {
        let ks = PROMPT.replace("> Agnes Needham: Help!\n", "utterance: > Agnes Needham: Help!\n\n");
        let out = MockBackend::Synthetic.complete(&ks, &CompletionParams::default()).unwrap();
        assert!(out.starts_with("Raptidon fact: Raptidons hunt.\nutterance: > Player: "), "{out}");
    }

    #[test]
    fn scripted_sequence_and_failures() {
        let s = MockBackend::Scripted(vec!["x".into(), "y".into()]);
        let p = |seed| CompletionParams {
            seed: Some(seed),
            ..CompletionParams::default()
        };
        assert_eq!(s.complete("", &p(3)).unwrap(), "y");
        let q = MockBackend::sequence([Ok("a".to_string())]);
        assert_eq!(q.complete("", &p(0)).unwrap(), "a");
        assert!(q.complete("", &p(0)).is_err());
        assert!(MockBackend::Fail.complete("", &p(0)).is_err());
    }
}
