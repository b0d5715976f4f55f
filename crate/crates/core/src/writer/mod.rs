//! The dialogue writer: prompts a completion backend for candidate next
//! utterances and grows spine trees from them.

pub mod backend;
pub mod http;
pub mod parse;
pub mod spine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearize::GenerationTask;
use crate::prompting::{build_icl_prompt, ExemplarPool, Prompt, PromptConfig, PromptError};
use crate::seed::mix_seed;

pub use backend::{BackendError, CompletionParams, LmBackend, MockBackend};
pub use http::HttpBackend;
pub use parse::{parse_completion, Candidate, ParseError, SelectedFact};
pub use spine::{generate_spine, CommitPolicy, ExternalChoice, SeededRandom, SpineBuilder, SpineError, SpineResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WriterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("zero parseable candidates out of {attempts} completions")]
    NoCandidates { attempts: usize },
}

/// Decoding and parsing knobs for one generation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WriterOptions {
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
    /// Speaker assigned when a completion names a non-participant. Defaults
    /// to alternating with the most recent speaker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_speaker: Option<String>,
}

impl Default for WriterOptions {
    fn default() -> Self {
        let p = CompletionParams::default();
        Self {
            max_tokens: p.max_tokens,
            temperature: p.temperature,
            stop: p.stop,
            expected_speaker: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prompt: Prompt,
    pub candidates: Vec<Candidate>,
    /// Completions that stayed unparseable after the retry.
    pub dropped: usize,
}

/// Player after an NPC line; after a player line, the NPC who spoke last in
/// the history, or the first NPC.
pub fn default_expected_speaker(task: &GenerationTask) -> Option<String> {
    let spec = &task.spec;
    let recent = task.most_recent_node()?;
    if !spec.is_player(&recent.speaker) {
        return spec.player_name().map(str::to_string);
    }
    task.history_nodes()
        .iter()
        .rev()
        .map(|n| n.speaker.as_str())
        .find(|s| spec.is_participant(s) && !spec.is_player(s))
        .or_else(|| spec.npcs().next().map(|p| p.name.as_str()))
        .map(str::to_string)
}

/// Builds the prompt once and asks for `k` completions concurrently, with
/// seeds `config.seed + i`. A completion that fails to parse is requested
/// once more with a derived seed and dropped if it fails again.
pub fn generate_candidates(
    task: &GenerationTask,
    config: &PromptConfig,
    pool: Option<&ExemplarPool>,
    k: usize,
    options: &WriterOptions,
    backend: &dyn LmBackend,
) -> Result<CandidateSet, WriterError> {
    if k == 0 {
        return Err(WriterError::ZeroK);
    }
    let prompt = build_icl_prompt(task, config, pool)?;
    let expected = options.expected_speaker.clone().or_else(|| default_expected_speaker(task));
    let ks = config.mode.is_ks();

    let one = |i: usize| -> Result<Option<Candidate>, BackendError> {
        let base = config.seed.wrapping_add(i as u64);
        for seed in [base, mix_seed(base, &[1])] {
            let params = CompletionParams {
                max_tokens: options.max_tokens,
                temperature: options.temperature,
                stop: options.stop.clone(),
                seed: Some(seed),
            };
            let raw = backend.complete(&prompt.text, &params)?;
            match parse_completion(&raw, &task.spec, ks, expected.as_deref()) {
                Ok(c) => return Ok(Some(c)),
                Err(e) => log::debug!("completion {i} unparseable ({e}): {raw:?}"),
            }
        }
        Ok(None)
    };

    let results: Vec<Result<Option<Candidate>, BackendError>> = if k == 1 {
        vec![one(0)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..k).map(|i| s.spawn(move || one(i))).collect();
            handles.into_iter().map(|h| h.join().expect("completion worker panicked")).collect()
        })
    };

    let mut candidates = Vec::with_capacity(k);
    for r in results {
        if let Some(c) = r? {
            candidates.push(c);
        }
    }
    if candidates.is_empty() {
        return Err(WriterError::NoCandidates { attempts: 2 * k });
    }
    let dropped = k - candidates.len();
    Ok(CandidateSet {
        prompt,
        candidates,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::History;
    use crate::model::{fixtures, FactRef};
    use crate::prompting::PromptMode;

    fn task(most_recent: &str) -> GenerationTask {
        let ids: Vec<String> = ["a", "b", "c"].iter().take_while(|id| **id != most_recent).map(|s| s.to_string()).chain([most_recent.to_string()]).collect();
        GenerationTask {
            id: "t".into(),
            dialogue_id: "d".into(),
            spec: fixtures::spec(),
            subtree: fixtures::chain(),
            most_recent: most_recent.into(),
            history: History::exact(ids),
            gold_target: None,
            gold_facts: None,
        }
    }

    #[test]
    fn scripted_echo_gives_identical_candidates() {
        let backend = MockBackend::scripted_line("> Agnes Needham: Thank you!");
        let set = generate_candidates(&task("c"), &PromptConfig::default(), None, 3, &WriterOptions::default(), &backend).unwrap();
        assert_eq!(set.candidates.len(), 3);
        assert!(set.candidates.iter().all(|c| c.text == "Thank you!" && c.speaker == "Agnes Needham"));
        assert_eq!(set.dropped, 0);
    }

    #[test]
    fn ks_candidate_carries_facts() {
        let raw = "Agnes Needham fact: She is an anxious mother.\nutterance: > Agnes Needham: Please.\n";
        let backend = MockBackend::scripted_line(raw);
        let config = PromptConfig::with_mode(PromptMode::Ks);
        let set = generate_candidates(&task("b"), &config, None, 1, &WriterOptions::default(), &backend).unwrap();
        assert_eq!(set.candidates[0].resolved_facts(), vec![FactRef::new("Agnes Needham", 1)]);
    }

    #[test]
    fn garbage_is_zero_candidates() {
        let err = generate_candidates(&task("c"), &PromptConfig::default(), None, 2, &WriterOptions::default(), &MockBackend::Garbage).unwrap_err();
        assert_eq!(err, WriterError::NoCandidates { attempts: 4 });
        assert_eq!(err.to_string(), "zero parseable candidates out of 4 completions");
    }

    #[test]
    fn parse_failure_retried_once() {
        let backend = MockBackend::sequence([Ok("junk".to_string()), Ok("> Player: Sure.".to_string())]);
        let set = generate_candidates(&task("c"), &PromptConfig::default(), None, 1, &WriterOptions::default(), &backend).unwrap();
        assert_eq!(set.candidates[0].text, "Sure.");
        let backend = MockBackend::sequence([Ok("junk".to_string()), Ok("junk".to_string())]);
        assert!(generate_candidates(&task("c"), &PromptConfig::default(), None, 1, &WriterOptions::default(), &backend).is_err());
    }

    #[test]
    fn backend_failure_propagates() {
        let err = generate_candidates(&task("c"), &PromptConfig::default(), None, 3, &WriterOptions::default(), &MockBackend::Fail).unwrap_err();
        assert!(matches!(err, WriterError::Backend(_)));
        assert_eq!(
            generate_candidates(&task("c"), &PromptConfig::default(), None, 0, &WriterOptions::default(), &MockBackend::Fail).unwrap_err(),
            WriterError::ZeroK
        );
    }

    #[test]
    fn expected_speaker_alternates() {
        assert_eq!(default_expected_speaker(&task("c")).as_deref(), Some("Player"));
        assert_eq!(default_expected_speaker(&task("b")).as_deref(), Some("Agnes Needham"));
        let backend = MockBackend::scripted_line("> Ghost: Boo.");
        let set = generate_candidates(&task("b"), &PromptConfig::default(), None, 1, &WriterOptions::default(), &backend).unwrap();
        assert_eq!(set.candidates[0].speaker, "Agnes Needham");
        assert_eq!(set.candidates[0].warnings.len(), 1);
    }

    #[test]
    fn synthetic_mock_is_deterministic() {
        let cfg = PromptConfig::default();
        let a = generate_candidates(&task("c"), &cfg, None, 3, &WriterOptions::default(), &MockBackend::Synthetic).unwrap();
        let b = generate_candidates(&task("c"), &cfg, None, 3, &WriterOptions::default(), &MockBackend::Synthetic).unwrap();
        assert_eq!(a, b);
    }
}
