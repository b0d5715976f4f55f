//! Quest/biography ontology, dialogue graphs and corpus containers.
//!
//! A dialogue is described by a [`DialogueSpec`] (the quest statements, the
//! biography passages and the participant list) and a [`DialogueTree`], a
//! directed graph of speaker-attributed utterances. Trees have exactly one
//! start node, may contain cycles and may have several exit nodes.
//!
//! Every statement is addressable through a [`FactRef`] `(source, index)`,
//! which is how utterances cite the support facts they depend on.

mod ops;
mod validate;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{corpus_stats, extract_quest_subgraph, split_by_quests, StatsReport};
pub use validate::{
    validate_corpus, validate_dialogue, validate_spec, validate_tree, Finding, FindingKind,
    Severity, ValidationReport,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown source id `{0}`")]
    UnknownSource(String),
    #[error("index out of range: source `{source_id}` has {len} statements, got index {index}")]
    IndexOutOfRange {
        source_id: String,
        index: usize,
        len: usize,
    },
    #[error("missing start node `{0}`")]
    MissingStart(String),
    #[error("split counts {train}+{dev}+{test} do not sum to the quest count {quests}")]
    SplitCounts {
        train: usize,
        dev: usize,
        test: usize,
        quests: usize,
    },
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("unknown dialogue `{0}`")]
    UnknownDialogue(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

/// One sentence of a quest or biography passage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Statement {
    /// Identifier of the owning passage or section.
    pub source: String,
    /// 0-based ordinal within `source`.
    pub i: usize,
    pub text: String,
}

impl Statement {
    pub fn new(source: impl Into<String>, i: usize, text: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            i,
            text: text.into(),
        }
    }

    pub fn fact_ref(&self) -> FactRef {
        FactRef::new(self.source.clone(), self.i)
    }
}

/// Builds a contiguous statement list for one source.
pub fn statements<S: AsRef<str>>(source: &str, texts: &[S]) -> Vec<Statement> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Statement::new(source, i, t.as_ref()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiographyPassage {
    pub entity: String,
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub name: String,
    pub game_log: Vec<Statement>,
    #[serde(default)]
    pub walkthrough: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestSpec {
    pub quest_name: String,
    pub synopsis: Vec<Statement>,
    #[serde(default)]
    pub synopsis_walkthrough: Vec<Statement>,
    pub objectives: Vec<Objective>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub name: String,
    #[serde(default)]
    pub player: bool,
}

impl Participant {
    pub fn npc(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            player: false,
        }
    }

    pub fn player(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            player: true,
        }
    }
}

/// Whether a knowledge source belongs to the quest statements or the
/// biography passages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    Quest,
    Bio,
}

/// A resolvable statement list inside a [`DialogueSpec`].
#[derive(Debug, Clone, Copy)]
pub struct KnowledgeSource<'a> {
    pub id: &'a str,
    /// Human-facing label: the entity name for biographies, the objective
    /// name for quest statements.
    pub label: &'a str,
    pub kind: KnowledgeKind,
    pub statements: &'a [Statement],
}

/// The per-dialogue input specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSpec {
    pub quest_name: String,
    pub in_objectives: Vec<Objective>,
    pub out_objectives: Vec<Objective>,
    pub bios: Vec<BiographyPassage>,
    pub participants: Vec<Participant>,
}

impl DialogueSpec {
    pub fn player(&self) -> Option<&Participant> {
        self.participants.iter().find(|p| p.player)
    }

    pub fn player_name(&self) -> Option<&str> {
        self.player().map(|p| p.name.as_str())
    }

    pub fn npcs(&self) -> impl Iterator<Item = &Participant> {
        self.participants.iter().filter(|p| !p.player)
    }

    pub fn participant_names(&self) -> Vec<&str> {
        self.participants.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn is_participant(&self, name: &str) -> bool {
        self.participants.iter().any(|p| p.name == name)
    }

    pub fn is_player(&self, name: &str) -> bool {
        self.participants.iter().any(|p| p.player && p.name == name)
    }

    pub fn bio(&self, entity: &str) -> Option<&BiographyPassage> {
        self.bios.iter().find(|b| b.entity == entity)
    }

    /// Every non-empty statement list, in rendering order: in-objective logs
    /// and walkthroughs, out-objective logs, then biographies.
    pub fn knowledge(&self) -> Vec<KnowledgeSource<'_>> {
        fn push<'a>(
            out: &mut Vec<KnowledgeSource<'a>>,
            label: &'a str,
            kind: KnowledgeKind,
            stmts: &'a [Statement],
        ) {
            if let Some(first) = stmts.first() {
                out.push(KnowledgeSource {
                    id: first.source.as_str(),
                    label,
                    kind,
                    statements: stmts,
                });
            }
        }
        let mut out = Vec::new();
        for o in &self.in_objectives {
            push(&mut out, &o.name, KnowledgeKind::Quest, &o.game_log);
            push(&mut out, &o.name, KnowledgeKind::Quest, &o.walkthrough);
        }
        for o in &self.out_objectives {
            push(&mut out, &o.name, KnowledgeKind::Quest, &o.game_log);
        }
        for b in &self.bios {
            push(&mut out, &b.entity, KnowledgeKind::Bio, &b.statements);
        }
        out
    }

    pub fn source(&self, id: &str) -> Option<KnowledgeSource<'_>> {
        self.knowledge().into_iter().find(|s| s.id == id)
    }

    /// Q: every quest statement visible to the dialogue, in rendering order.
    pub fn quest_statements(&self) -> Vec<&Statement> {
        self.knowledge()
            .into_iter()
            .filter(|s| s.kind == KnowledgeKind::Quest)
            .flat_map(|s| s.statements.iter())
            .collect()
    }

    /// B: every biography statement, in corpus order.
    pub fn bio_statements(&self) -> Vec<&Statement> {
        self.bios.iter().flat_map(|b| b.statements.iter()).collect()
    }

    /// Label to print in front of a cited fact (`<label> fact: ...`).
    pub fn fact_label(&self, fact: &FactRef) -> Option<&str> {
        self.source(&fact.source).map(|s| s.label)
    }

    /// Quest record holding this spec's objectives, in and out, with an
    /// empty synopsis.
    pub fn quest_spec(&self) -> QuestSpec {
        QuestSpec {
            quest_name: self.quest_name.clone(),
            synopsis: Vec::new(),
            synopsis_walkthrough: Vec::new(),
            objectives: self.in_objectives.iter().chain(&self.out_objectives).cloned().collect(),
        }
    }
}

/// Looks up the statement addressed by `fact` within Q ∪ B.
pub fn resolve_fact<'a>(spec: &'a DialogueSpec, fact: &FactRef) -> Result<&'a Statement, ModelError> {
    let source = spec
        .source(&fact.source)
        .ok_or_else(|| ModelError::UnknownSource(fact.source.clone()))?;
    source
        .statements
        .get(fact.i)
        .ok_or(ModelError::IndexOutOfRange {
            source_id: fact.source.clone(),
            index: fact.i,
            len: source.statements.len(),
        })
}

/// Reference to a statement in Q ∪ B.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactRef {
    pub source: String,
    pub i: usize,
}

impl FactRef {
    pub fn new(source: impl Into<String>, i: usize) -> Self {
        Self {
            source: source.into(),
            i,
        }
    }
}

impl fmt::Display for FactRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.source, self.i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    #[default]
    Gold,
    GeneratedCommitted,
    GeneratedUncommitted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceNode {
    pub id: String,
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub support_facts: Vec<FactRef>,
    #[serde(default)]
    pub origin: Origin,
}

impl UtteranceNode {
    pub fn new(id: impl Into<String>, speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            speaker: speaker.into(),
            text: text.into(),
            support_facts: Vec::new(),
            origin: Origin::Gold,
        }
    }

    pub fn with_facts(mut self, facts: Vec<FactRef>) -> Self {
        self.support_facts = facts;
        self
    }

    /// `> Speaker: text`
    pub fn line(&self) -> String {
        format!("> {}: {}", self.speaker, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub cond: bool,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            cond: false,
        }
    }

    pub fn conditioned(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            cond: true,
            ..Self::new(from, to)
        }
    }

    pub fn key(&self) -> EdgeKey {
        (self.from.clone(), self.to.clone())
    }
}

/// Edges are identified by their endpoints; parallel edges are not allowed.
pub type EdgeKey = (String, String);

/// Directed utterance graph with a single start node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTree {
    pub start: String,
    #[serde(with = "node_list")]
    pub nodes: BTreeMap<String, UtteranceNode>,
    pub edges: Vec<Edge>,
}

mod node_list {
    use super::UtteranceNode;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        nodes: &BTreeMap<String, UtteranceNode>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let list: Vec<&UtteranceNode> = nodes.values().collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<String, UtteranceNode>, D::Error> {
        let list = Vec::<UtteranceNode>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for node in list {
            let id = node.id.clone();
            if map.insert(id.clone(), node).is_some() {
                return Err(D::Error::custom(format!("duplicate node id `{id}`")));
            }
        }
        Ok(map)
    }
}

impl DialogueTree {
    /// A one-node tree.
    pub fn single(start: UtteranceNode) -> Self {
        let id = start.id.clone();
        let mut nodes = BTreeMap::new();
        nodes.insert(id.clone(), start);
        Self {
            start: id,
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn from_parts(
        start: impl Into<String>,
        nodes: Vec<UtteranceNode>,
        edges: Vec<Edge>,
    ) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for n in nodes {
            let id = n.id.clone();
            if map.insert(id.clone(), n).is_some() {
                return Err(ModelError::DuplicateNode(id));
            }
        }
        Ok(Self {
            start: start.into(),
            nodes: map,
            edges,
        })
    }

    pub fn node(&self, id: &str) -> Option<&UtteranceNode> {
        self.nodes.get(id)
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    /// Out-neighbours of every node, sorted by target id.
    pub fn adjacency(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &self.edges {
            adj.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
        for targets in adj.values_mut() {
            targets.sort_unstable();
            targets.dedup();
        }
        adj
    }

    pub fn parents(&self, id: &str) -> Vec<&str> {
        let mut p: Vec<&str> = self
            .edges
            .iter()
            .filter(|e| e.to == id)
            .map(|e| e.from.as_str())
            .collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Node ids in breadth-first order from the start node, children visited
    /// in id order. Unreachable nodes are omitted.
    pub fn bfs_order(&self) -> Vec<String> {
        let adj = self.adjacency();
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        if !self.nodes.contains_key(&self.start) {
            return order;
        }
        let mut queue = VecDeque::from([self.start.as_str()]);
        seen.insert(self.start.as_str());
        while let Some(id) = queue.pop_front() {
            order.push(id.to_string());
            for &next in adj.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                if self.nodes.contains_key(next) && seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        order
    }

    pub fn reachable(&self) -> BTreeSet<String> {
        self.bfs_order().into_iter().collect()
    }

    /// Subgraph induced by `ids`: those nodes and every edge between them.
    pub fn induced(&self, ids: &BTreeSet<String>) -> DialogueTree {
        DialogueTree {
            start: self.start.clone(),
            nodes: self
                .nodes
                .iter()
                .filter(|(id, _)| ids.contains(*id))
                .map(|(id, n)| (id.clone(), n.clone()))
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|e| ids.contains(&e.from) && ids.contains(&e.to))
                .cloned()
                .collect(),
        }
    }

    pub fn add_node(&mut self, node: UtteranceNode) -> Result<(), ModelError> {
        if self.nodes.contains_key(&node.id) {
            return Err(ModelError::DuplicateNode(node.id));
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub spec: DialogueSpec,
    pub tree: DialogueTree,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub quests: Vec<QuestSpec>,
    pub dialogues: Vec<Dialogue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_assignment: Option<BTreeMap<String, Split>>,
}

impl Corpus {
    pub fn dialogue(&self, id: &str) -> Result<&Dialogue, ModelError> {
        self.dialogues
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| ModelError::UnknownDialogue(id.to_string()))
    }

    pub fn split_of(&self, dialogue: &Dialogue) -> Option<Split> {
        self.split_assignment
            .as_ref()
            .and_then(|m| m.get(&dialogue.spec.quest_name))
            .copied()
    }

    pub fn dialogues_in(&self, split: Split) -> impl Iterator<Item = &Dialogue> {
        self.dialogues
            .iter()
            .filter(move |d| self.split_of(d) == Some(split))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_canonical_json(&self) -> String {
        crate::json::canonical(self)
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn resolve_bio_first_sentence() {
        let s = spec();
        let st = resolve_fact(&s, &FactRef::new("Agnes Needham", 0)).unwrap();
        assert_eq!(st.text, "Agnes Needham lives by the gate.");
    }

    #[test]
    fn resolve_index_equal_to_len_is_out_of_range() {
        let s = spec();
        let err = resolve_fact(&s, &FactRef::new("Agnes Needham", 2)).unwrap_err();
        assert!(matches!(err, ModelError::IndexOutOfRange { len: 2, .. }));
        assert!(err.to_string().contains("index out of range"));
    }

    #[test]
    fn resolve_unknown_source() {
        let err = resolve_fact(&spec(), &FactRef::new("Nobody", 0)).unwrap_err();
        assert_eq!(err, ModelError::UnknownSource("Nobody".into()));
    }

    #[test]
    fn every_statement_resolves_by_full_scan() {
        let s = spec();
        let mut count = 0;
        for src in s.knowledge() {
            for st in src.statements {
                assert_eq!(resolve_fact(&s, &st.fact_ref()).unwrap(), st);
                count += 1;
            }
        }
        assert_eq!(count, s.quest_statements().len() + s.bio_statements().len());
        for node in chain().nodes.values() {
            for f in &node.support_facts {
                resolve_fact(&s, f).unwrap();
            }
        }
    }

    #[test]
    fn duplicate_node_ids_fail_to_load() {
        let json = r#"{"start":"a","nodes":[
            {"id":"a","speaker":"P","text":"x"},{"id":"a","speaker":"P","text":"y"}],"edges":[]}"#;
        let err = serde_json::from_str::<DialogueTree>(json).unwrap_err();
        assert!(err.to_string().contains("duplicate node id"));
    }

    #[test]
    fn bfs_breaks_ties_by_id() {
        let t = DialogueTree::from_parts(
            "s",
            vec![
                UtteranceNode::new("s", "P", "x"),
                UtteranceNode::new("z", "P", "x"),
                UtteranceNode::new("m", "P", "x"),
                UtteranceNode::new("b", "P", "x"),
            ],
            vec![Edge::new("s", "z"), Edge::new("s", "m"), Edge::new("m", "b")],
        )
        .unwrap();
        assert_eq!(t.bfs_order(), vec!["s", "m", "z", "b"]);
    }
}
