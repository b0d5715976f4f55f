use std::collections::BTreeSet;

use proptest::prelude::*;
use questwriter_core::linearize::{
    all_edge_simple_paths, check_path, linearize, longest_trail, sample_path, DEFAULT_SEARCH_BUDGET,
};
use questwriter_core::model::{DialogueTree, Edge, UtteranceNode};

fn build(n: usize, edges: &[(usize, usize)]) -> DialogueTree {
    let id = |i: usize| format!("n{i:02}");
    let nodes = (0..n).map(|i| UtteranceNode::new(id(i), "P", "x")).collect();
    let mut seen = BTreeSet::new();
    let edges = edges
        .iter()
        .filter(|&&(a, b)| a < n && b < n && seen.insert((a, b)))
        .map(|&(a, b)| Edge::new(id(a), id(b)))
        .collect();
    DialogueTree::from_parts(id(0), nodes, edges).unwrap()
}

fn small_graph() -> impl Strategy<Value = DialogueTree> {
    (2usize..7).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..12).prop_map(move |edges| build(n, &edges))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn linearize_matches_exhaustive_oracle(tree in small_graph()) {
        for target in tree.reachable() {
            let all = all_edge_simple_paths(&tree, &target, 1_000_000).unwrap();
            prop_assert!(all.complete);
            let max = all.paths.iter().map(Vec::len).max().unwrap();
            let expected = all.paths.iter().filter(|p| p.len() == max).min().unwrap();
            let got = linearize(&tree, &target, DEFAULT_SEARCH_BUDGET).unwrap();
            prop_assert!(!got.budget_truncated);
            prop_assert_eq!(&got.ids, expected);
        }
    }

    #[test]
    fn every_history_is_a_valid_path(tree in small_graph(), seed in any::<u64>()) {
        for target in tree.reachable() {
            let h = linearize(&tree, &target, 3).unwrap();
            prop_assert!(check_path(&tree, &h.ids, Some(&target)).is_ok());
            let s = sample_path(&tree, &target, seed).unwrap();
            prop_assert!(check_path(&tree, &s.ids, Some(&target)).is_ok());
        }
        let trail = longest_trail(&tree, DEFAULT_SEARCH_BUDGET).unwrap();
        prop_assert!(check_path(&tree, &trail.ids, None).is_ok());
    }

    #[test]
    fn longest_trail_dominates_every_target(tree in small_graph()) {
        let trail = longest_trail(&tree, DEFAULT_SEARCH_BUDGET).unwrap();
        for target in tree.reachable() {
            let h = linearize(&tree, &target, DEFAULT_SEARCH_BUDGET).unwrap();
            prop_assert!(trail.ids.len() >= h.ids.len());
        }
    }
}
