use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DialogueTree, EdgeKey, ModelError, Split};

/// Keeps the unconditioned edges plus the whitelisted conditioned ones, then
/// prunes whatever is no longer reachable from the start node.
pub fn extract_quest_subgraph(
    raw: &DialogueTree,
    keep_conditioned: &BTreeSet<EdgeKey>,
) -> Result<DialogueTree, ModelError> {
    if !raw.nodes.contains_key(&raw.start) {
        return Err(ModelError::MissingStart(raw.start.clone()));
    }
    let kept: Vec<_> = raw
        .edges
        .iter()
        .filter(|e| !e.cond || keep_conditioned.contains(&e.key()))
        .collect();

    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &kept {
        adj.entry(e.from.as_str()).or_default().push(e.to.as_str());
    }
    let mut reachable = BTreeSet::from([raw.start.as_str()]);
    let mut queue = VecDeque::from([raw.start.as_str()]);
    while let Some(id) = queue.pop_front() {
        for &next in adj.get(id).map(Vec::as_slice).unwrap_or(&[]) {
            if raw.nodes.contains_key(next) && reachable.insert(next) {
                queue.push_back(next);
            }
        }
    }

    Ok(DialogueTree {
        start: raw.start.clone(),
        nodes: raw
            .nodes
            .iter()
            .filter(|(id, _)| reachable.contains(id.as_str()))
            .map(|(id, n)| (id.clone(), n.clone()))
            .collect(),
        edges: kept
            .into_iter()
            .filter(|e| reachable.contains(e.from.as_str()) && reachable.contains(e.to.as_str()))
            .cloned()
            .collect(),
    })
}

/// Seeded partition of the corpus quests into train/dev/test with exactly the
/// requested sizes. Every dialogue inherits the split of its quest.
pub fn split_by_quests(
    corpus: &Corpus,
    (train, dev, test): (usize, usize, usize),
    seed: u64,
) -> Result<Corpus, ModelError> {
    let quests = corpus.quests.len();
    if train + dev + test != quests {
        return Err(ModelError::SplitCounts {
            train,
            dev,
            test,
            quests,
        });
    }
    let mut names: Vec<&str> = corpus.quests.iter().map(|q| q.quest_name.as_str()).collect();
    names.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names.shuffle(&mut rng);

    let assignment = names
        .iter()
        .enumerate()
        .map(|(pos, name)| {
            let split = if pos < train {
                Split::Train
            } else if pos < train + dev {
                Split::Dev
            } else {
                Split::Test
            };
            (name.to_string(), split)
        })
        .collect();
    Ok(Corpus {
        split_assignment: Some(assignment),
        ..corpus.clone()
    })
}

/// Corpus-level annotation and size statistics. Ratios over an empty
/// population are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub dialogues: usize,
    pub nodes: usize,
    pub npc_nodes: usize,
    pub annotated_nodes: usize,
    pub annotated_npc_nodes: usize,
    pub annotated_fraction: Option<f64>,
    pub npc_annotated_fraction: Option<f64>,
    pub mean_facts_per_npc_node: Option<f64>,
    pub mean_quest_statements_per_dialogue: Option<f64>,
    pub mean_bio_statements_per_dialogue: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let mut nodes = 0;
    let mut npc_nodes = 0;
    let mut annotated = 0;
    let mut annotated_npc = 0;
    let mut npc_facts = 0;
    let mut quest_statements = 0;
    let mut bio_statements = 0;

    for d in &corpus.dialogues {
        quest_statements += d.spec.quest_statements().len();
        bio_statements += d.spec.bio_statements().len();
        for node in d.tree.nodes.values() {
            let is_npc = !d.spec.is_player(&node.speaker);
            let has_facts = !node.support_facts.is_empty();
            nodes += 1;
            annotated += usize::from(has_facts);
            if is_npc {
                npc_nodes += 1;
                annotated_npc += usize::from(has_facts);
                npc_facts += node.support_facts.len();
            }
        }
    }
    let dialogues = corpus.dialogues.len();
    StatsReport {
        dialogues,
        nodes,
        npc_nodes,
        annotated_nodes: annotated,
        annotated_npc_nodes: annotated_npc,
        annotated_fraction: ratio(annotated, nodes),
        npc_annotated_fraction: ratio(annotated_npc, npc_nodes),
        mean_facts_per_npc_node: ratio(npc_facts, npc_nodes),
        mean_quest_statements_per_dialogue: ratio(quest_statements, dialogues),
        mean_bio_statements_per_dialogue: ratio(bio_statements, dialogues),
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{chain, spec};
    use super::super::*;
    use super::*;

    fn node(id: &str) -> UtteranceNode {
        UtteranceNode::new(id, "Player", "line")
    }

    fn bfs_oracle(t: &DialogueTree, kept: &[(&str, &str)]) -> BTreeSet<String> {
        let mut seen = BTreeSet::from([t.start.clone()]);
        loop {
            let before = seen.len();
            for (a, b) in kept {
                if seen.contains(*a) {
                    seen.insert(b.to_string());
                }
            }
            if seen.len() == before {
                return seen;
            }
        }
    }

    #[test]
    fn no_conditioned_edges_is_identity() {
        let t = chain();
        assert_eq!(extract_quest_subgraph(&t, &BTreeSet::new()).unwrap(), t);
    }

    #[test]
    fn conditioned_tail_is_pruned() {
        let t = DialogueTree::from_parts(
            "a",
            vec![node("a"), node("b"), node("c")],
            vec![Edge::new("a", "b"), Edge::conditioned("b", "c")],
        )
        .unwrap();
        let out = extract_quest_subgraph(&t, &BTreeSet::new()).unwrap();
        assert_eq!(out.nodes.keys().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(out.edges, vec![Edge::new("a", "b")]);
    }

    #[test]
    fn whitelisted_diamond_branch_retained() {
        // a -> b -> d, a -(cond)-> c -> d, b -(cond)-> e
        let t = DialogueTree::from_parts(
            "a",
            ["a", "b", "c", "d", "e"].map(node).to_vec(),
            vec![
                Edge::new("a", "b"),
                Edge::conditioned("a", "c"),
                Edge::new("b", "d"),
                Edge::new("c", "d"),
                Edge::conditioned("b", "e"),
            ],
        )
        .unwrap();
        let keep = BTreeSet::from([("a".to_string(), "c".to_string())]);
        let out = extract_quest_subgraph(&t, &keep).unwrap();
        let expected = bfs_oracle(&t, &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        assert_eq!(out.nodes.keys().cloned().collect::<BTreeSet<_>>(), expected);
        assert!(out.has_edge("a", "c"));
        assert!(!out.nodes.contains_key("e"));
        assert!(validate_tree(&out, &["Player"]).is_clean());
    }

    #[test]
    fn extraction_requires_start() {
        let mut t = chain();
        t.start = "x".into();
        assert_eq!(
            extract_quest_subgraph(&t, &BTreeSet::new()).unwrap_err(),
            ModelError::MissingStart("x".into())
        );
    }

    fn quests(n: usize) -> Corpus {
        Corpus {
            quests: (0..n)
                .map(|i| QuestSpec {
                    quest_name: format!("quest-{i:02}"),
                    synopsis: statements(&format!("quest-{i:02}#synopsis"), &["A quest."]),
                    synopsis_walkthrough: vec![],
                    objectives: vec![],
                })
                .collect(),
            ..Corpus::default()
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let c = split_by_quests(&quests(45), (28, 5, 12), 3).unwrap();
        let a = c.split_assignment.unwrap();
        assert_eq!(a.len(), 45);
        let count = |s| a.values().filter(|v| **v == s).count();
        assert_eq!((count(Split::Train), count(Split::Dev), count(Split::Test)), (28, 5, 12));
    }

    #[test]
    fn split_degenerate_all_train() {
        let c = split_by_quests(&quests(7), (7, 0, 0), 9).unwrap();
        assert!(c.split_assignment.unwrap().values().all(|s| *s == Split::Train));
    }

    #[test]
    fn split_counts_must_sum() {
        let err = split_by_quests(&quests(5), (2, 2, 2), 0).unwrap_err();
        assert!(matches!(err, ModelError::SplitCounts { quests: 5, .. }));
    }

    #[test]
    fn split_seed_determinism() {
        let c = quests(20);
        let a = split_by_quests(&c, (10, 5, 5), 11).unwrap();
        let b = split_by_quests(&c, (10, 5, 5), 11).unwrap();
        assert_eq!(a.to_canonical_json(), b.to_canonical_json());
        let other = (0..20u64)
            .map(|s| split_by_quests(&c, (10, 5, 5), s).unwrap().split_assignment)
            .collect::<BTreeSet<_>>();
        assert!(other.len() > 1, "seeds should produce different partitions");
    }

    #[test]
    fn stats_fixture_fraction() {
        let s = spec();
        let tree = DialogueTree::from_parts(
            "a",
            vec![
                UtteranceNode::new("a", "Agnes Needham", "One")
                    .with_facts(vec![FactRef::new("Raptidon", 0)]),
                UtteranceNode::new("b", "Player", "Two"),
                UtteranceNode::new("c", "Agnes Needham", "Three"),
                UtteranceNode::new("d", "Player", "Four"),
            ],
            vec![Edge::new("a", "b"), Edge::new("b", "c"), Edge::new("c", "d")],
        )
        .unwrap();
        let corpus = Corpus {
            quests: vec![],
            dialogues: vec![Dialogue {
                id: "d0".into(),
                spec: s,
                tree,
            }],
            split_assignment: None,
        };
        let r = corpus_stats(&corpus);
        assert_eq!((r.nodes, r.npc_nodes), (4, 2));
        assert_eq!(r.npc_annotated_fraction, Some(0.5));
        assert_eq!(r.annotated_fraction, Some(0.25));
    }

    #[test]
    fn stats_empty_corpus() {
        let r = corpus_stats(&Corpus::default());
        assert_eq!((r.dialogues, r.nodes, r.npc_nodes), (0, 0, 0));
        assert!(r.annotated_fraction.is_none());
        assert!(r.npc_annotated_fraction.is_none());
        assert!(r.mean_bio_statements_per_dialogue.is_none());
    }

    #[test]
    fn stats_means_match_manual_sums() {
        let mut dialogues = Vec::new();
        // dialogue 0: fixture spec (4 quest, 3 bio statements), chain tree
        dialogues.push(Dialogue {
            id: "d0".into(),
            spec: spec(),
            tree: chain(),
        });
        // dialogue 1: drop the Raptidon bio (2 bio statements)
        let mut s1 = spec();
        s1.bios.remove(0);
        dialogues.push(Dialogue {
            id: "d1".into(),
            spec: s1,
            tree: chain(),
        });
        // dialogue 2: no out objective (3 quest statements), two facts on c
        let mut s2 = spec();
        s2.out_objectives.clear();
        let mut t2 = chain();
        t2.nodes.get_mut("c").unwrap().support_facts =
            vec![FactRef::new("Raptidon", 0), FactRef::new("Agnes Needham", 0)];
        dialogues.push(Dialogue {
            id: "d2".into(),
            spec: s2,
            tree: t2,
        });
        let corpus = Corpus {
            quests: vec![],
            dialogues,
            split_assignment: None,
        };
        let r = corpus_stats(&corpus);
        // quest: 4 + 4 + 3; bio: 3 + 2 + 3
        assert_eq!(r.mean_quest_statements_per_dialogue, Some(11.0 / 3.0));
        assert_eq!(r.mean_bio_statements_per_dialogue, Some(8.0 / 3.0));
        // npc nodes: a, c in each dialogue; facts 1+1, 1+1, 1+2
        assert_eq!(r.npc_nodes, 6);
        assert_eq!(r.mean_facts_per_npc_node, Some(7.0 / 6.0));
        assert_eq!(r.npc_annotated_fraction, Some(1.0));
        assert_eq!(r.annotated_fraction, Some(6.0 / 9.0));
    }
}
