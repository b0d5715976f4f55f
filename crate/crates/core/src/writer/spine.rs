//! Spine growth: repeated rounds of k candidates hung off the committed
//! frontier, one of which is committed per round.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{generate_candidates, Candidate, LmBackend, WriterError, WriterOptions};
use crate::linearize::GenerationTask;
use crate::model::{resolve_fact, DialogueSpec, DialogueTree, Edge, FactRef, Origin, UtteranceNode};
use crate::prompting::{ExemplarPool, PromptConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpineError {
    #[error("rounds and k must be at least 1")]
    ZeroSize,
    #[error("speaker `{0}` is not a participant")]
    UnknownSpeaker(String),
    #[error("the previous round has not been committed")]
    RoundOpen,
    #[error("no round is open")]
    NoOpenRound,
    #[error("`{0}` is not a candidate of the open round")]
    NotACandidate(String),
    #[error("a round needs at least one candidate")]
    EmptyRound,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error(transparent)]
    Writer(#[from] WriterError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpineResult {
    pub tree: DialogueTree,
    pub committed_path: Vec<String>,
    /// Rounds whose candidates were attached.
    pub rounds: usize,
    pub round_candidates: Vec<Vec<String>>,
    /// Set when a round failed before the requested number was reached.
    #[serde(default)]
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Incremental spine state, shared by the batch driver and the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpineBuilder {
    spec: DialogueSpec,
    tree: DialogueTree,
    committed_path: Vec<String>,
    round_candidates: Vec<Vec<String>>,
    open: bool,
}

impl SpineBuilder {
    pub fn new(spec: DialogueSpec, mut start: UtteranceNode) -> Result<Self, SpineError> {
        if !spec.is_participant(&start.speaker) {
            return Err(SpineError::UnknownSpeaker(start.speaker));
        }
        if start.id.is_empty() {
            start.id = "start".into();
        }
        let id = start.id.clone();
        Ok(Self {
            spec,
            tree: DialogueTree::single(start),
            committed_path: vec![id],
            round_candidates: Vec::new(),
            open: false,
        })
    }

    pub fn spec(&self) -> &DialogueSpec {
        &self.spec
    }

    pub fn tree(&self) -> &DialogueTree {
        &self.tree
    }

    pub fn committed_path(&self) -> &[String] {
        &self.committed_path
    }

    pub fn round_candidates(&self) -> &[Vec<String>] {
        &self.round_candidates
    }

    /// Candidate ids of the uncommitted round, if any.
    pub fn open_round(&self) -> Option<&[String]> {
        self.open.then(|| self.round_candidates.last().map(Vec::as_slice)).flatten()
    }

    pub fn rounds(&self) -> usize {
        self.round_candidates.len()
    }

    pub fn frontier(&self) -> &str {
        self.committed_path.last().expect("path holds the start node")
    }

    /// Generation task at the committed frontier.
    pub fn next_task(&self) -> Result<GenerationTask, SpineError> {
        if self.open {
            return Err(SpineError::RoundOpen);
        }
        let round = self.rounds() + 1;
        GenerationTask::at_frontier(
            format!("{}/r{round:02}", self.spec.quest_name),
            "spine",
            self.spec.clone(),
            self.tree.clone(),
            self.frontier(),
        )
        .map_err(|e| SpineError::UnknownNode(e.to_string()))
    }

    /// Hangs the candidates off the frontier as uncommitted leaves and opens
    /// a round. Returns their ids (`rNNcJ`, J from 1).
    pub fn attach(&mut self, candidates: &[Candidate]) -> Result<Vec<String>, SpineError> {
        if self.open {
            return Err(SpineError::RoundOpen);
        }
        if candidates.is_empty() {
            return Err(SpineError::EmptyRound);
        }
        let round = self.rounds() + 1;
        let frontier = self.frontier().to_string();
        let mut ids = Vec::with_capacity(candidates.len());
        for (j, c) in candidates.iter().enumerate() {
            let mut id = format!("r{round:02}c{}", j + 1);
            while self.tree.nodes.contains_key(&id) {
                id.push('_');
            }
            let mut node = UtteranceNode::new(id.clone(), c.speaker.clone(), c.text.clone()).with_facts(c.resolved_facts());
            node.origin = Origin::GeneratedUncommitted;
            self.tree.add_node(node).expect("fresh id");
            self.tree.edges.push(Edge::new(frontier.clone(), id.clone()));
            ids.push(id);
        }
        self.round_candidates.push(ids.clone());
        self.open = true;
        Ok(ids)
    }

    pub fn commit(&mut self, id: &str) -> Result<(), SpineError> {
        let round = self.open_round().ok_or(SpineError::NoOpenRound)?;
        if !round.iter().any(|c| c == id) {
            return Err(SpineError::NotACandidate(id.to_string()));
        }
        self.tree.nodes.get_mut(id).expect("candidate in tree").origin = Origin::GeneratedCommitted;
        self.committed_path.push(id.to_string());
        self.open = false;
        Ok(())
    }

    /// Edits a node in place. Nothing changes unless every field is valid.
    pub fn edit(
        &mut self,
        id: &str,
        text: Option<String>,
        speaker: Option<String>,
        facts: Option<Vec<FactRef>>,
    ) -> Result<&UtteranceNode, SpineError> {
        if !self.tree.nodes.contains_key(id) {
            return Err(SpineError::UnknownNode(id.to_string()));
        }
        if let Some(t) = &text {
            if t.trim().is_empty() {
                return Err(SpineError::InvalidEdit("text must not be empty".into()));
            }
        }
        if let Some(s) = &speaker {
            if !self.spec.is_participant(s) {
                return Err(SpineError::InvalidEdit(format!("speaker `{s}` is not a participant")));
            }
        }
        if let Some(fs) = &facts {
            for f in fs {
                resolve_fact(&self.spec, f).map_err(|e| SpineError::InvalidEdit(e.to_string()))?;
            }
        }
        let node = self.tree.nodes.get_mut(id).expect("checked above");
        if let Some(t) = text {
            node.text = t;
        }
        if let Some(s) = speaker {
            node.speaker = s;
        }
        if let Some(fs) = facts {
            node.support_facts = fs;
        }
        Ok(node)
    }

    pub fn result(&self, partial: bool, failure: Option<String>) -> SpineResult {
        SpineResult {
            tree: self.tree.clone(),
            committed_path: self.committed_path.clone(),
            rounds: self.rounds(),
            round_candidates: self.round_candidates.clone(),
            partial,
            failure,
        }
    }
}

/// Picks the committed candidate of a round.
pub trait CommitPolicy {
    fn choose(&mut self, round: usize, candidates: &[String], tree: &DialogueTree) -> String;
}

/// Uniform choice from a seeded generator.
#[derive(Debug, Clone)]
pub struct SeededRandom(ChaCha8Rng);

impl SeededRandom {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl CommitPolicy for SeededRandom {
    fn choose(&mut self, _round: usize, candidates: &[String], _tree: &DialogueTree) -> String {
        candidates[self.0.gen_range(0..candidates.len())].clone()
    }
}

/// Defers to a callback, e.g. a human in the loop.
pub struct ExternalChoice<F>(pub F);

impl<F: FnMut(usize, &[String]) -> String> CommitPolicy for ExternalChoice<F> {
    fn choose(&mut self, round: usize, candidates: &[String], _tree: &DialogueTree) -> String {
        (self.0)(round, candidates)
    }
}

/// Grows a spine for `rounds` rounds of `k` candidates. A round that fails
/// ends the run early with a partial result.
#[allow(clippy::too_many_arguments)]
pub fn generate_spine(
    spec: DialogueSpec,
    start: UtteranceNode,
    rounds: usize,
    k: usize,
    config: &PromptConfig,
    pool: Option<&ExemplarPool>,
    options: &WriterOptions,
    policy: &mut dyn CommitPolicy,
    backend: &dyn LmBackend,
) -> Result<SpineResult, SpineError> {
    if rounds == 0 || k == 0 {
        return Err(SpineError::ZeroSize);
    }
    let mut builder = SpineBuilder::new(spec, start)?;
    for r in 1..=rounds {
        let task = builder.next_task()?;
        let round_config = PromptConfig {
            seed: crate::seed::mix_seed(config.seed, &[r as u64]),
            ..config.clone()
        };
        let set = match generate_candidates(&task, &round_config, pool, k, options, backend) {
            Ok(set) => set,
            Err(e) => {
                log::warn!("round {r} failed: {e}");
                return Ok(builder.result(true, Some(e.to_string())));
            }
        };
        let ids = builder.attach(&set.candidates)?;
        let chosen = policy.choose(r, &ids, builder.tree());
        builder.commit(&chosen)?;
    }
    Ok(builder.result(false, None))
}
