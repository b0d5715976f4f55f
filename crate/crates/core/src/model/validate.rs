use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{resolve_fact, Corpus, DialogueSpec, DialogueTree, Statement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MissingStart,
    DanglingEdge,
    DuplicateEdge,
    Unreachable,
    UnknownSpeaker,
    EmptyText,
    UnresolvableFact,
    NoPlayer,
    MultiplePlayers,
    DuplicateParticipant,
    MissingBio,
    EmptyBio,
    DuplicateEntity,
    EmptyName,
    EmptyStatement,
    BadStatementIndex,
    MixedSource,
    DuplicateSource,
    OutObjectiveWalkthrough,
    UnknownQuest,
    DuplicateQuest,
    DuplicateDialogue,
    UnassignedQuest,
    UnknownSplitQuest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
    /// Node id, edge, source id or dialogue id the finding is about.
    pub subject: String,
    pub message: String,
}

impl Finding {
    fn error(kind: FindingKind, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            kind,
            subject: subject.into(),
            message: message.into(),
        }
    }

    fn warning(kind: FindingKind, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(kind, subject, message)
        }
    }

    fn scoped(mut self, scope: &str) -> Self {
        self.subject = format!("{scope}/{}", self.subject);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    fn extend(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
    }
}

/// Checks the graph invariants of a dialogue tree and that every speaker is a
/// participant. Findings are data; this never fails.
pub fn validate_tree<S: AsRef<str>>(tree: &DialogueTree, participants: &[S]) -> ValidationReport {
    let mut findings = Vec::new();
    let names: BTreeSet<&str> = participants.iter().map(AsRef::as_ref).collect();

    let start_ok = tree.nodes.contains_key(&tree.start);
    if !start_ok {
        findings.push(Finding::error(
            FindingKind::MissingStart,
            &tree.start,
            format!("start node `{}` is not in the node set", tree.start),
        ));
    }

    let mut seen_edges = BTreeSet::new();
    for e in &tree.edges {
        let subject = format!("{}->{}", e.from, e.to);
        for end in [&e.from, &e.to] {
            if !tree.nodes.contains_key(end) {
                findings.push(Finding::error(
                    FindingKind::DanglingEdge,
                    &subject,
                    format!("dangling edge: endpoint `{end}` does not exist"),
                ));
            }
        }
        if !seen_edges.insert((&e.from, &e.to)) {
            findings.push(Finding::error(
                FindingKind::DuplicateEdge,
                &subject,
                "edge listed more than once",
            ));
        }
    }

    if start_ok {
        let reachable = tree.reachable();
        for id in tree.nodes.keys() {
            if !reachable.contains(id) {
                findings.push(Finding::error(
                    FindingKind::Unreachable,
                    id,
                    format!("node `{id}` is unreachable from the start node"),
                ));
            }
        }
    }

    for node in tree.nodes.values() {
        if !names.contains(node.speaker.as_str()) {
            findings.push(Finding::error(
                FindingKind::UnknownSpeaker,
                &node.id,
                format!("unknown speaker `{}`", node.speaker),
            ));
        }
        if node.text.trim().is_empty() {
            findings.push(Finding::error(FindingKind::EmptyText, &node.id, "empty utterance text"));
        }
    }

    ValidationReport { findings }
}

fn check_statement_list(list: &[Statement], owner: &str, findings: &mut Vec<Finding>) {
    let Some(first) = list.first() else { return };
    for (pos, st) in list.iter().enumerate() {
        if st.source != first.source {
            findings.push(Finding::error(
                FindingKind::MixedSource,
                &st.source,
                format!("{owner}: statement {pos} belongs to `{}`, expected `{}`", st.source, first.source),
            ));
        }
        if st.i != pos {
            findings.push(Finding::error(
                FindingKind::BadStatementIndex,
                &st.source,
                format!("{owner}: statement at position {pos} has index {}", st.i),
            ));
        }
        if st.text.trim().is_empty() {
            findings.push(Finding::error(
                FindingKind::EmptyStatement,
                format!("{}[{}]", st.source, st.i),
                format!("{owner}: empty statement text"),
            ));
        }
    }
}

/// Checks a dialogue specification: one player, unique entities and sources,
/// well-formed statement lists. A missing biography for an NPC participant is
/// reported as a warning.
pub fn validate_spec(spec: &DialogueSpec) -> ValidationReport {
    let mut findings = Vec::new();
    let q = &spec.quest_name;

    match spec.participants.iter().filter(|p| p.player).count() {
        0 => findings.push(Finding::error(FindingKind::NoPlayer, q, "no participant is flagged as the player")),
        1 => {}
        n => findings.push(Finding::error(
            FindingKind::MultiplePlayers,
            q,
            format!("{n} participants are flagged as the player"),
        )),
    }
    let mut names = BTreeSet::new();
    for p in &spec.participants {
        if p.name.trim().is_empty() {
            findings.push(Finding::error(FindingKind::EmptyName, q, "empty participant name"));
        }
        if !names.insert(p.name.as_str()) {
            findings.push(Finding::error(
                FindingKind::DuplicateParticipant,
                &p.name,
                format!("participant `{}` listed twice", p.name),
            ));
        }
    }
    for npc in spec.npcs() {
        if spec.bio(&npc.name).is_none() {
            findings.push(Finding::warning(
                FindingKind::MissingBio,
                &npc.name,
                format!("NPC participant `{}` has no biography passage", npc.name),
            ));
        }
    }

    let mut entities = BTreeSet::new();
    for b in &spec.bios {
        if !entities.insert(b.entity.as_str()) {
            findings.push(Finding::error(
                FindingKind::DuplicateEntity,
                &b.entity,
                format!("biography for `{}` listed twice", b.entity),
            ));
        }
        if b.statements.is_empty() {
            findings.push(Finding::error(
                FindingKind::EmptyBio,
                &b.entity,
                format!("biography for `{}` has no statements", b.entity),
            ));
        }
        check_statement_list(&b.statements, &b.entity, &mut findings);
    }
    for o in spec.in_objectives.iter().chain(&spec.out_objectives) {
        if o.name.trim().is_empty() {
            findings.push(Finding::error(FindingKind::EmptyName, q, "objective with an empty name"));
        }
        check_statement_list(&o.game_log, &o.name, &mut findings);
        check_statement_list(&o.walkthrough, &o.name, &mut findings);
    }
    for o in &spec.out_objectives {
        if !o.walkthrough.is_empty() {
            findings.push(Finding::error(
                FindingKind::OutObjectiveWalkthrough,
                &o.name,
                "out objectives carry game logs only",
            ));
        }
    }

    let mut sources = BTreeSet::new();
    for src in spec.knowledge() {
        if !sources.insert(src.id) {
            findings.push(Finding::error(
                FindingKind::DuplicateSource,
                src.id,
                format!("source id `{}` is used by more than one statement list", src.id),
            ));
        }
    }

    ValidationReport { findings }
}

/// Spec checks, tree checks against the spec's participants, and resolution
/// of every support fact.
pub fn validate_dialogue(spec: &DialogueSpec, tree: &DialogueTree) -> ValidationReport {
    let mut report = validate_spec(spec);
    report.extend(validate_tree(tree, &spec.participant_names()));
    for node in tree.nodes.values() {
        for f in &node.support_facts {
            if let Err(e) = resolve_fact(spec, f) {
                report.findings.push(Finding::error(
                    FindingKind::UnresolvableFact,
                    &node.id,
                    format!("support fact {f}: {e}"),
                ));
            }
        }
    }
    report
}

pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut quests = BTreeSet::new();
    for quest in &corpus.quests {
        if !quests.insert(quest.quest_name.as_str()) {
            report.findings.push(Finding::error(
                FindingKind::DuplicateQuest,
                &quest.quest_name,
                "quest name listed twice",
            ));
        }
    }
    let mut ids = BTreeSet::new();
    for d in &corpus.dialogues {
        if !ids.insert(d.id.as_str()) {
            report.findings.push(Finding::error(
                FindingKind::DuplicateDialogue,
                &d.id,
                "dialogue id listed twice",
            ));
        }
        if !quests.contains(d.spec.quest_name.as_str()) {
            report.findings.push(Finding::error(
                FindingKind::UnknownQuest,
                &d.id,
                format!("quest `{}` is not defined", d.spec.quest_name),
            ));
        }
        let inner = validate_dialogue(&d.spec, &d.tree);
        report
            .findings
            .extend(inner.findings.into_iter().map(|f| f.scoped(&d.id)));
    }
    if let Some(assignment) = &corpus.split_assignment {
        check_assignment(assignment, &quests, &mut report.findings);
    }
    report
}

fn check_assignment<V>(
    assignment: &BTreeMap<String, V>,
    quests: &BTreeSet<&str>,
    findings: &mut Vec<Finding>,
) {
    for q in quests {
        if !assignment.contains_key(*q) {
            findings.push(Finding::error(
                FindingKind::UnassignedQuest,
                *q,
                "quest has no split assignment",
            ));
        }
    }
    for q in assignment.keys() {
        if !quests.contains(q.as_str()) {
            findings.push(Finding::error(
                FindingKind::UnknownSplitQuest,
                q,
                "split assignment names an unknown quest",
            ));
        }
    }
}
