//! Tree linearization: turning a partial dialogue graph into a linear
//! utterance history.
//!
//! The history for a node `n` is the longest path from the start node to `n`
//! that never follows the same edge twice (revisiting nodes through cycles is
//! allowed). Longest edge-simple path is NP-hard in general, so [`linearize`]
//! runs an exact depth-first branch-and-bound search under an expansion
//! budget and degrades to a greedy extension when the budget runs out.
//!
//! Ties between maximal paths go to the lexicographically smallest id
//! sequence. Children are explored in id order, so the first maximal path the
//! search meets is that one.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dialogue, DialogueSpec, DialogueTree, FactRef, UtteranceNode};
use crate::seed::mix_seed;

pub const DEFAULT_SEARCH_BUDGET: usize = 100_000;

/// Exact enumeration bound used by [`sample_path`].
pub const SAMPLE_ENUMERATION_CAP: usize = 10_000;

const RANDOM_WALK_RESTARTS: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinearizeError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is unreachable from the start node")]
    Unreachable(String),
    #[error("path cap must be positive")]
    ZeroCap,
}

/// Utterance ids from the start node to the most recent node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub ids: Vec<String>,
    /// Set when the search budget ran out before the search was exact.
    #[serde(default)]
    pub budget_truncated: bool,
}

impl History {
    pub fn exact(ids: Vec<String>) -> Self {
        Self {
            ids,
            budget_truncated: false,
        }
    }

    pub fn last(&self) -> Option<&str> {
        self.ids.last().map(String::as_str)
    }

    /// Number of edges followed.
    pub fn edge_len(&self) -> usize {
        self.ids.len().saturating_sub(1)
    }

    pub fn nodes<'t>(&self, tree: &'t DialogueTree) -> Vec<&'t UtteranceNode> {
        self.ids.iter().filter_map(|id| tree.node(id)).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathViolation {
    #[error("path is empty")]
    Empty,
    #[error("path starts at `{0}`, not the start node")]
    WrongStart(String),
    #[error("no edge {0} -> {1}")]
    MissingEdge(String, String),
    #[error("edge {0} -> {1} followed twice")]
    RepeatedEdge(String, String),
    #[error("path ends at `{found}`, expected `{expected}`")]
    WrongEnd { expected: String, found: String },
}

/// Checks the history invariants: anchored at the start node, consecutive ids
/// joined by edges, no edge repeated, ending at `target` when given.
pub fn check_path(tree: &DialogueTree, ids: &[String], target: Option<&str>) -> Result<(), PathViolation> {
    let first = ids.first().ok_or(PathViolation::Empty)?;
    if *first != tree.start {
        return Err(PathViolation::WrongStart(first.clone()));
    }
    let mut used = BTreeSet::new();
    for pair in ids.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if !tree.has_edge(a, b) {
            return Err(PathViolation::MissingEdge(a.clone(), b.clone()));
        }
        if !used.insert((a, b)) {
            return Err(PathViolation::RepeatedEdge(a.clone(), b.clone()));
        }
    }
    match target {
        Some(t) if ids.last().map(String::as_str) != Some(t) => Err(PathViolation::WrongEnd {
            expected: t.to_string(),
            found: ids.last().cloned().unwrap_or_default(),
        }),
        _ => Ok(()),
    }
}

/// Index-based view of a tree. Node indices follow id order, so comparing
/// index sequences is comparing id sequences.
struct Graph {
    ids: Vec<String>,
    /// `(edge index, head)` per node, sorted by head.
    out: Vec<Vec<(usize, usize)>>,
    edge_count: usize,
    start: usize,
}

impl Graph {
    fn new(tree: &DialogueTree) -> Result<Self, LinearizeError> {
        let ids: Vec<String> = tree.nodes.keys().cloned().collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let start = *index
            .get(tree.start.as_str())
            .ok_or_else(|| LinearizeError::UnknownNode(tree.start.clone()))?;
        let mut out = vec![Vec::new(); ids.len()];
        let mut seen = BTreeSet::new();
        let mut edge_count = 0;
        for e in &tree.edges {
            let (Some(&a), Some(&b)) = (index.get(e.from.as_str()), index.get(e.to.as_str())) else {
                continue;
            };
            if seen.insert((a, b)) {
                out[a].push((edge_count, b));
                edge_count += 1;
            }
        }
        for list in &mut out {
            list.sort_unstable_by_key(|&(_, head)| head);
        }
        Ok(Self {
            ids,
            out,
            edge_count,
            start,
        })
    }

    fn index_of(&self, id: &str) -> Result<usize, LinearizeError> {
        self.ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .map_err(|_| LinearizeError::UnknownNode(id.to_string()))
    }

    fn names(&self, path: &[usize]) -> Vec<String> {
        path.iter().map(|&i| self.ids[i].clone()).collect()
    }

    /// Unused edges reachable from `from` over unused edges, and whether
    /// `target` is among the reachable nodes.
    fn residual(&self, from: usize, used: &[bool], target: Option<usize>) -> (usize, bool) {
        let mut seen = vec![false; self.ids.len()];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        let mut edges = 0;
        while let Some(n) = queue.pop_front() {
            for &(e, head) in &self.out[n] {
                if used[e] {
                    continue;
                }
                edges += 1;
                if !seen[head] {
                    seen[head] = true;
                    queue.push_back(head);
                }
            }
        }
        let hit = target.is_none_or(|t| seen[t]);
        (edges, hit)
    }

    fn reaches(&self, from: usize, to: usize, used: &[bool]) -> bool {
        self.residual(from, used, Some(to)).1
    }
}

struct Search<'g> {
    g: &'g Graph,
    target: Option<usize>,
    used: Vec<bool>,
    path: Vec<usize>,
    best: Option<Vec<usize>>,
    expansions: usize,
    budget: usize,
    exhausted: bool,
}

impl Search<'_> {
    fn best_len(&self) -> Option<usize> {
        self.best.as_ref().map(|p| p.len() - 1)
    }

    fn dfs(&mut self, node: usize) {
        if self.exhausted {
            return;
        }
        self.expansions += 1;
        if self.expansions > self.budget {
            self.exhausted = true;
            return;
        }
        let len = self.path.len() - 1;
        if self.target.is_none_or(|t| t == node) && self.best_len().is_none_or(|b| len > b) {
            self.best = Some(self.path.clone());
        }
        let (remaining, target_reachable) = self.g.residual(node, &self.used, self.target);
        if !target_reachable || self.best_len().is_some_and(|b| len + remaining <= b) {
            return;
        }
        for k in 0..self.g.out[node].len() {
            let (e, head) = self.g.out[node][k];
            if self.used[e] {
                continue;
            }
            self.used[e] = true;
            self.path.push(head);
            self.dfs(head);
            self.path.pop();
            self.used[e] = false;
            if self.exhausted {
                return;
            }
        }
    }
}

/// Greedy extension: from the start node, repeatedly follow the lowest-id
/// unused edge after which `target` stays reachable; the result ends at the
/// last visit of `target`.
fn greedy_path(g: &Graph, target: usize) -> Vec<usize> {
    let mut used = vec![false; g.edge_count];
    let mut path = vec![g.start];
    let mut best_end = (g.start == target).then_some(1);
    let mut cur = g.start;
    loop {
        let next = g.out[cur].iter().copied().find(|&(e, head)| {
            if used[e] {
                return false;
            }
            used[e] = true;
            let ok = head == target || g.reaches(head, target, &used);
            used[e] = false;
            ok
        });
        let Some((e, head)) = next else { break };
        used[e] = true;
        path.push(head);
        cur = head;
        if cur == target {
            best_end = Some(path.len());
        }
    }
    path.truncate(best_end.unwrap_or(0));
    path
}

fn longer(a: Vec<usize>, b: Vec<usize>) -> Vec<usize> {
    if b.len() > a.len() || (b.len() == a.len() && b < a) {
        b
    } else {
        a
    }
}

fn search(tree: &DialogueTree, target: Option<&str>, budget: usize) -> Result<History, LinearizeError> {
    let g = Graph::new(tree)?;
    let target_idx = target.map(|t| g.index_of(t)).transpose()?;
    if let Some(t) = target_idx {
        if !g.reaches(g.start, t, &vec![false; g.edge_count]) {
            return Err(LinearizeError::Unreachable(g.ids[t].clone()));
        }
    }
    let mut s = Search {
        g: &g,
        target: target_idx,
        used: vec![false; g.edge_count],
        path: vec![g.start],
        best: None,
        expansions: 0,
        budget: budget.max(1),
        exhausted: false,
    };
    s.dfs(g.start);
    let exhausted = s.exhausted;
    let mut best = s.best.unwrap_or_default();
    if exhausted {
        if let Some(t) = target_idx {
            best = longer(best, greedy_path(&g, t));
        } else if best.is_empty() {
            best = vec![g.start];
        }
    }
    Ok(History {
        ids: g.names(&best),
        budget_truncated: exhausted,
    })
}

/// Longest edge-simple path from the start node to `target`.
pub fn linearize(tree: &DialogueTree, target: &str, budget: usize) -> Result<History, LinearizeError> {
    search(tree, Some(target), budget)
}

/// Longest edge-simple path from the start node ending anywhere; the
/// maximal-coverage linearization of a whole gold dialogue.
pub fn longest_trail(tree: &DialogueTree, budget: usize) -> Result<History, LinearizeError> {
    search(tree, None, budget)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEnumeration {
    pub paths: Vec<Vec<String>>,
    /// False when the cap stopped the enumeration early.
    pub complete: bool,
}

/// Every start-to-`target` path that repeats no edge, in depth-first order
/// with children visited by id. Stops after `cap` paths.
pub fn all_edge_simple_paths(
    tree: &DialogueTree,
    target: &str,
    cap: usize,
) -> Result<PathEnumeration, LinearizeError> {
    if cap == 0 {
        return Err(LinearizeError::ZeroCap);
    }
    let g = Graph::new(tree)?;
    let t = g.index_of(target)?;

    fn walk(
        g: &Graph,
        node: usize,
        t: usize,
        cap: usize,
        used: &mut [bool],
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) -> bool {
        if node == t {
            if out.len() == cap {
                return false;
            }
            out.push(path.clone());
        }
        for &(e, head) in &g.out[node] {
            if used[e] {
                continue;
            }
            used[e] = true;
            path.push(head);
            let more = walk(g, head, t, cap, used, path, out);
            path.pop();
            used[e] = false;
            if !more {
                return false;
            }
        }
        true
    }

    let mut raw = Vec::new();
    let complete = walk(&g, g.start, t, cap, &mut vec![false; g.edge_count], &mut vec![g.start], &mut raw);
    Ok(PathEnumeration {
        paths: raw.iter().map(|p| g.names(p)).collect(),
        complete,
    })
}

/// Uniformly samples one edge-simple path to `target`. Exact over the
/// enumeration when it has at most [`SAMPLE_ENUMERATION_CAP`] paths;
/// otherwise a seeded random walk with restarts.
pub fn sample_path(tree: &DialogueTree, target: &str, seed: u64) -> Result<History, LinearizeError> {
    let g = Graph::new(tree)?;
    let t = g.index_of(target)?;
    if !g.reaches(g.start, t, &vec![false; g.edge_count]) {
        return Err(LinearizeError::Unreachable(target.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let listing = all_edge_simple_paths(tree, target, SAMPLE_ENUMERATION_CAP)?;
    if listing.complete {
        let pick = rng.gen_range(0..listing.paths.len());
        return Ok(History::exact(listing.paths[pick].clone()));
    }

    for _ in 0..RANDOM_WALK_RESTARTS {
        let mut used = vec![false; g.edge_count];
        let mut path = vec![g.start];
        let mut arrivals = Vec::new();
        let mut cur = g.start;
        loop {
            if cur == t {
                arrivals.push(path.len());
            }
            let open: Vec<(usize, usize)> = g.out[cur].iter().copied().filter(|&(e, _)| !used[e]).collect();
            if open.is_empty() {
                break;
            }
            let (e, head) = open[rng.gen_range(0..open.len())];
            used[e] = true;
            path.push(head);
            cur = head;
        }
        if !arrivals.is_empty() {
            let end = arrivals[rng.gen_range(0..arrivals.len())];
            path.truncate(end);
            return Ok(History::exact(g.names(&path)));
        }
    }
    Ok(History {
        ids: g.names(&greedy_path(&g, t)),
        budget_truncated: true,
    })
}

/// One generation instance: the inputs `(Q, B, P, S, n)` plus the derived
/// history and, for gold items, the reference target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTask {
    pub id: String,
    pub dialogue_id: String,
    pub spec: DialogueSpec,
    pub subtree: DialogueTree,
    pub most_recent: String,
    pub history: History,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_target: Option<UtteranceNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_facts: Option<Vec<FactRef>>,
}

impl GenerationTask {
    /// Task for extending `tree` after `most_recent`, history by
    /// [`linearize`].
    pub fn at_frontier(
        id: impl Into<String>,
        dialogue_id: impl Into<String>,
        spec: DialogueSpec,
        tree: DialogueTree,
        most_recent: &str,
    ) -> Result<Self, LinearizeError> {
        let history = linearize(&tree, most_recent, DEFAULT_SEARCH_BUDGET)?;
        Ok(Self {
            id: id.into(),
            dialogue_id: dialogue_id.into(),
            spec,
            subtree: tree,
            most_recent: most_recent.to_string(),
            history,
            gold_target: None,
            gold_facts: None,
        })
    }

    pub fn history_nodes(&self) -> Vec<&UtteranceNode> {
        self.history.nodes(&self.subtree)
    }

    pub fn most_recent_node(&self) -> Option<&UtteranceNode> {
        self.subtree.node(&self.most_recent)
    }
}

/// Next-utterance items for one gold dialogue.
///
/// Nodes are visited breadth-first from the start (ties by id). Every
/// non-start node `n_i` becomes the target of `variants_per_node` items whose
/// subtree is induced by `n_1..n_{i-1}`, whose most recent node is the
/// earliest parent of `n_i` in that order. Variant 0 uses the linearized
/// (longest) history, later variants use seeded random paths. Identical
/// histories are kept.
pub fn build_nup_items(dialogue: &Dialogue, variants_per_node: usize, seed: u64) -> Vec<GenerationTask> {
    let tree = &dialogue.tree;
    let order = tree.bfs_order();
    let position: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut items = Vec::new();

    for (i, target_id) in order.iter().enumerate().skip(1) {
        let Some(parent) = tree
            .parents(target_id)
            .into_iter()
            .filter(|p| position.get(p).is_some_and(|&pos| pos < i))
            .min_by_key(|p| position[p])
        else {
            continue;
        };
        let prefix: BTreeSet<String> = order[..i].iter().cloned().collect();
        let subtree = tree.induced(&prefix);
        let target = tree.nodes[target_id].clone();

        for v in 0..variants_per_node {
            let history = if v == 0 {
                linearize(&subtree, parent, DEFAULT_SEARCH_BUDGET)
            } else {
                sample_path(&subtree, parent, mix_seed(seed, &[i as u64, v as u64]))
            }
            .expect("breadth-first prefixes keep every node reachable");
            items.push(GenerationTask {
                id: format!("{}/{}/{}", dialogue.id, target_id, v),
                dialogue_id: dialogue.id.clone(),
                spec: dialogue.spec.clone(),
                subtree: subtree.clone(),
                most_recent: parent.to_string(),
                history,
                gold_facts: Some(target.support_facts.clone()),
                gold_target: Some(target.clone()),
            });
        }
    }
    items
}
