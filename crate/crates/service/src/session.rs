//! Session state and its wire views.

use questwriter_core::model::{
    resolve_fact, Corpus, Dialogue, DialogueSpec, DialogueTree, FactRef, UtteranceNode,
};
use questwriter_core::prompting::PromptConfig;
use questwriter_core::writer::{Candidate, SelectedFact, SpineBuilder, WriterOptions};
use serde::{Deserialize, Serialize};

/// Generation settings fixed at session creation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub writer: WriterOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    pub builder: SpineBuilder,
    /// Bumped by every mutation.
    pub revision: u64,
}

/// A statement as shown next to a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactView {
    pub source: String,
    pub i: usize,
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: String,
    pub speaker: String,
    pub text: String,
    pub facts: Vec<FactView>,
    /// Fact lines the model produced that match no statement.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved_facts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundView {
    pub session_id: String,
    pub round: usize,
    pub revision: u64,
    pub candidates: Vec<CandidateView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub revision: u64,
    pub spec: DialogueSpec,
    pub tree: DialogueTree,
    pub committed_path: Vec<String>,
    pub round_candidates: Vec<Vec<String>>,
    pub open_round: Option<Vec<String>>,
    pub rounds: usize,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub session_id: String,
    pub revision: u64,
    pub node: UtteranceNode,
    pub facts: Vec<FactView>,
}

pub fn fact_view(spec: &DialogueSpec, f: &FactRef) -> Option<FactView> {
    let stmt = resolve_fact(spec, f).ok()?;
    Some(FactView {
        source: f.source.clone(),
        i: f.i,
        label: spec.fact_label(f).unwrap_or(&f.source).to_string(),
        text: stmt.text.clone(),
    })
}

impl Session {
    pub fn view(&self) -> SessionView {
        let b = &self.builder;
        SessionView {
            session_id: self.id.clone(),
            revision: self.revision,
            spec: b.spec().clone(),
            tree: b.tree().clone(),
            committed_path: b.committed_path().to_vec(),
            round_candidates: b.round_candidates().to_vec(),
            open_round: b.open_round().map(<[String]>::to_vec),
            rounds: b.rounds(),
            config: self.config.clone(),
        }
    }

    pub fn candidate_view(&self, id: &str, c: &Candidate) -> CandidateView {
        let spec = self.builder.spec();
        CandidateView {
            id: id.to_string(),
            speaker: c.speaker.clone(),
            text: c.text.clone(),
            facts: c.resolved_facts().iter().filter_map(|f| fact_view(spec, f)).collect(),
            unresolved_facts: c
                .selected_facts
                .iter()
                .filter_map(|s| match s {
                    SelectedFact::Unresolved { line } => Some(line.clone()),
                    SelectedFact::Resolved { .. } => None,
                })
                .collect(),
            warnings: c.warnings.clone(),
        }
    }

    pub fn node_view(&self, id: &str) -> Option<NodeView> {
        let node = self.builder.tree().node(id)?.clone();
        let facts = node.support_facts.iter().filter_map(|f| fact_view(self.builder.spec(), f)).collect();
        Some(NodeView {
            session_id: self.id.clone(),
            revision: self.revision,
            node,
            facts,
        })
    }

    /// Corpus document holding the session's quest and tree.
    pub fn export(&self) -> Corpus {
        let spec = self.builder.spec().clone();
        Corpus {
            quests: vec![spec.quest_spec()],
            dialogues: vec![Dialogue {
                id: self.id.clone(),
                spec,
                tree: self.builder.tree().clone(),
            }],
            split_assignment: None,
        }
    }
}

/// On-disk envelope written after each mutation when snapshots are enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session: Session,
    pub corpus: Corpus,
}
