//! Reading candidates back out of raw completions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DialogueSpec, FactRef};
use crate::prompting::render::{FACT_MARKER, UTTERANCE_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectedFact {
    Resolved { fact: FactRef },
    Unresolved { line: String },
}

impl SelectedFact {
    pub fn fact(&self) -> Option<&FactRef> {
        match self {
            SelectedFact::Resolved { fact } => Some(fact),
            SelectedFact::Unresolved { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub selected_facts: Vec<SelectedFact>,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Candidate {
    pub fn resolved_facts(&self) -> Vec<FactRef> {
        self.selected_facts.iter().filter_map(SelectedFact::fact).cloned().collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no utterance line found")]
    NoUtterance,
    #[error("empty utterance text")]
    EmptyText,
    #[error("speaker `{0}` is not a participant")]
    UnknownSpeaker(String),
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Resolves `<label> fact: <text>` against Q ∪ B: exact text first (a source
/// whose label matches wins), then whitespace- and case-insensitive text.
pub fn resolve_fact_line(spec: &DialogueSpec, line: &str) -> SelectedFact {
    let Some((label, text)) = line.split_once(FACT_MARKER) else {
        return SelectedFact::Unresolved { line: line.to_string() };
    };
    let (label, text) = (label.trim(), text.trim());
    let sources = spec.knowledge();
    let find = |matches: &dyn Fn(&str) -> bool| {
        let hits: Vec<_> = sources
            .iter()
            .flat_map(|k| k.statements.iter().map(move |s| (k.label, s)))
            .filter(|(_, s)| matches(&s.text))
            .collect();
        hits.iter()
            .find(|(l, _)| *l == label)
            .or(hits.first())
            .map(|(_, s)| s.fact_ref())
    };
    let norm = normalize(text);
    find(&|s| s == text)
        .or_else(|| find(&|s| normalize(s) == norm))
        .map(|fact| SelectedFact::Resolved { fact })
        .unwrap_or_else(|| SelectedFact::Unresolved { line: line.to_string() })
}

fn utterance(line: &str) -> Option<(&str, &str)> {
    let line = line.trim();
    let line = line.strip_prefix(UTTERANCE_PREFIX.trim_end()).map(str::trim_start).unwrap_or(line);
    let rest = line.strip_prefix('>')?.trim_start();
    let (speaker, text) = rest.split_once(':')?;
    Some((speaker.trim(), text.trim()))
}

/// Parses one completion.
///
/// Leading blank lines are skipped and everything after the next blank line
/// is discarded. In knowledge-selection mode, fact lines before the utterance
/// are collected. The first `> Speaker: text` line (optionally prefixed with
/// `utterance:`) is the candidate. A speaker outside the participant list is
/// reassigned to `expected_speaker` with a warning when one is given.
pub fn parse_completion(
    raw: &str,
    spec: &DialogueSpec,
    ks_mode: bool,
    expected_speaker: Option<&str>,
) -> Result<Candidate, ParseError> {
    let lines = raw.lines().skip_while(|l| l.trim().is_empty()).take_while(|l| !l.trim().is_empty());
    let mut facts = Vec::new();
    let mut found = None;
    for line in lines {
        if let Some(u) = utterance(line) {
            found = Some(u);
            break;
        }
        if ks_mode && line.contains(FACT_MARKER) {
            facts.push(resolve_fact_line(spec, line));
        }
    }
    let (speaker, text) = found.ok_or(ParseError::NoUtterance)?;
    if text.is_empty() {
        return Err(ParseError::EmptyText);
    }
    let mut warnings = Vec::new();
    let speaker = if spec.is_participant(speaker) {
        speaker.to_string()
    } else if let Some(expected) = expected_speaker {
        warnings.push(format!("speaker `{speaker}` is not a participant; reassigned to `{expected}`"));
        expected.to_string()
    } else {
        return Err(ParseError::UnknownSpeaker(speaker.to_string()));
    };
    Ok(Candidate {
        speaker,
        text: text.to_string(),
        selected_facts: facts,
        raw: raw.to_string(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::spec;

    #[test]
    fn plain_line() {
        let c = parse_completion("> Agnes Needham: Oh, thank you!", &spec(), false, None).unwrap();
        assert_eq!((c.speaker.as_str(), c.text.as_str()), ("Agnes Needham", "Oh, thank you!"));
        assert!(c.selected_facts.is_empty() && c.warnings.is_empty());
    }

    #[test]
    fn stops_at_blank_line() {
        let c = parse_completion("\n> Agnes Needham: Hello.\n\n> Player: leftover", &spec(), false, None).unwrap();
        assert_eq!(c.text, "Hello.");
        assert!(parse_completion("\n\n\nfoo\n\n> Player: late", &spec(), false, None).is_err());
    }

    #[test]
    fn ks_fact_lines() {
        let raw = "Agnes Needham fact: She is an anxious mother.\n\
                   Find the boy fact:   she OFFERS a reward. \n\
                   Nobody fact: Made up.\n\
                   utterance: > Agnes Needham: Please help.\n";
        let c = parse_completion(raw, &spec(), true, None).unwrap();
        assert_eq!(
            c.selected_facts,
            vec![
                SelectedFact::Resolved {
                    fact: FactRef::new("Agnes Needham", 1)
                },
                SelectedFact::Resolved {
                    fact: FactRef::new("Find the boy#walkthrough", 1)
                },
                SelectedFact::Unresolved {
                    line: "Nobody fact: Made up.".into()
                },
            ]
        );
        assert_eq!(c.resolved_facts().len(), 2);
        assert_eq!(c.text, "Please help.");
    }

    #[test]
    fn fact_lines_ignored_outside_ks() {
        let raw = "Agnes Needham fact: She is an anxious mother.\n> Player: Hm.";
        assert!(parse_completion(raw, &spec(), false, None).unwrap().selected_facts.is_empty());
    }

    #[test]
    fn unknown_speaker() {
        assert_eq!(
            parse_completion("> Ghost: Boo", &spec(), false, None).unwrap_err(),
            ParseError::UnknownSpeaker("Ghost".into())
        );
        let c = parse_completion("> Ghost: Boo", &spec(), false, Some("Player")).unwrap();
        assert_eq!(c.speaker, "Player");
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn garbage_and_empty() {
        assert_eq!(
            parse_completion("garbage with no marker", &spec(), true, None).unwrap_err(),
            ParseError::NoUtterance
        );
        assert_eq!(parse_completion("> Player:   ", &spec(), false, None).unwrap_err(), ParseError::EmptyText);
    }
}
