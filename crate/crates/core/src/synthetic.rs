//! Seeded synthetic quests, dialogues and corpora.
//!
//! The generated data follows the corpus schema and passes validation:
//! every NPC has a biography, trees are reachable from their start node,
//! speakers alternate between an NPC and the player, and support facts
//! resolve. Output depends only on the arguments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linearize::{build_nup_items, GenerationTask};
use crate::model::{
    statements, BiographyPassage, Corpus, Dialogue, DialogueSpec, DialogueTree, Edge, FactRef, Objective, Participant,
    QuestSpec, UtteranceNode,
};
use crate::seed::mix_seed;

pub const PLAYER: &str = "Player";

const FIRST: &[&str] = &[
    "Agnes", "Bram", "Cora", "Dunstan", "Edda", "Fenwick", "Greta", "Hollis", "Ilse", "Jory", "Kestrel", "Lorcan",
    "Maren", "Nils", "Oona", "Piet",
];
const LAST: &[&str] = &["Needham", "Ashford", "Carrow", "Dunmore", "Elling", "Fairweather", "Grieve", "Hale"];
const CREATURES: &[&str] = &["Raptidon", "Marsh Wyrm", "Ash Hound", "Glass Crab", "Thornback", "Mire Hag"];
const PLACES: &[&str] = &["the hills", "the old mill", "the salt marsh", "the watchtower", "the quarry", "the chapel"];
const ITEMS: &[&str] = &["a silver locket", "the ledger", "a bone whistle", "the mill key", "a sealed letter"];
const ADJ: &[&str] = &["Lost", "Silent", "Broken", "Hidden", "Last", "Burning", "Drowned", "Stolen"];
const NOUN: &[&str] = &["Son", "Bell", "Harvest", "Oath", "Lantern", "Crown", "Road", "Debt"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("word lists are non-empty")
}

/// A random dialogue specification for quest number `index`.
pub fn random_spec(rng: &mut ChaCha8Rng, index: usize) -> DialogueSpec {
    let quest_name = format!("The {} {} {}", pick(rng, ADJ), pick(rng, NOUN), index + 1);
    let npc_count = rng.gen_range(1..=2);
    let mut npcs: Vec<String> = Vec::new();
    while npcs.len() < npc_count {
        let name = format!("{} {}", pick(rng, FIRST), pick(rng, LAST));
        if !npcs.contains(&name) {
            npcs.push(name);
        }
    }
    let creature = pick(rng, CREATURES);
    let place = pick(rng, PLACES);
    let item = pick(rng, ITEMS);
    let giver = npcs[0].clone();

    let objective = |rng: &mut ChaCha8Rng, name: String, walkthrough: bool| {
        let log = if walkthrough {
            vec![
                format!("{giver} asks you to find {item}."),
                format!("The trail leads toward {place}."),
                format!("A {creature} was seen near {place}."),
            ]
        } else {
            vec![
                format!("You recovered {item} from {place}."),
                format!("{giver} rewarded you for your help."),
                format!("The {creature} no longer troubles {place}."),
            ]
        };
        let steps = [
            format!("Speak with {giver}."),
            format!("Travel to {place}."),
            format!("Defeat the {creature}."),
            format!("Return {item} to {giver}."),
        ];
        let n_log = rng.gen_range(1..=2);
        let n_steps = if walkthrough { rng.gen_range(1..=3) } else { 0 };
        Objective {
            game_log: statements(&format!("{name}#log"), &log[..n_log]),
            walkthrough: statements(&format!("{name}#walkthrough"), &steps[..n_steps]),
            name,
        }
    };

    let in_objectives = (0..rng.gen_range(1..=2))
        .map(|i| objective(rng, format!("Objective {} of {}", i + 1, quest_name), true))
        .collect();
    let out_objectives = (0..rng.gen_range(0..=2))
        .map(|i| objective(rng, format!("Later step {} of {}", i + 1, quest_name), false))
        .collect();

    let mut bios: Vec<BiographyPassage> = npcs
        .iter()
        .map(|n| {
            let texts = [
                format!("{n} lives near {place}."),
                format!("{n} has not slept since {item} went missing."),
                format!("{n} distrusts strangers."),
            ];
            let len = rng.gen_range(1..=3);
            BiographyPassage {
                entity: n.clone(),
                statements: statements(n, &texts[..len]),
            }
        })
        .collect();
    bios.push(BiographyPassage {
        entity: creature.to_string(),
        statements: statements(
            creature,
            &[format!("The {creature} is a predator of the lowlands."), format!("The {creature} hunts at dusk.")],
        ),
    });

    let mut participants: Vec<Participant> = npcs.into_iter().map(Participant::npc).collect();
    participants.push(Participant::player(PLAYER));
    DialogueSpec {
        quest_name,
        in_objectives,
        out_objectives,
        bios,
        participants,
    }
}

fn all_facts(spec: &DialogueSpec) -> Vec<(FactRef, String)> {
    spec.knowledge()
        .iter()
        .flat_map(|k| k.statements.iter().map(|s| (s.fact_ref(), s.text.clone())))
        .collect()
}

/// A random dialogue graph with `2..=max_nodes` nodes over `spec`. Every node
/// hangs off an earlier one, so all nodes are reachable; a few extra edges
/// may close cycles.
pub fn random_tree(rng: &mut ChaCha8Rng, spec: &DialogueSpec, max_nodes: usize) -> DialogueTree {
    let facts = all_facts(spec);
    let npcs: Vec<&str> = spec.npcs().map(|p| p.name.as_str()).collect();
    let n = rng.gen_range(2..=max_nodes.max(2));
    let mut nodes: Vec<UtteranceNode> = Vec::with_capacity(n);
    let mut edges: Vec<Edge> = Vec::new();
    let player_lines = ["What happened?", "Where should I look?", "I will help.", "Tell me more.", "Why me?"];

    for i in 0..n {
        let parent = (i > 0).then(|| rng.gen_range(0..i));
        let npc_turn = parent.is_none_or(|p| nodes[p].speaker == PLAYER);
        let id = format!("n{i}");
        let node = if npc_turn {
            let speaker = pick(rng, &npcs);
            let cited: Vec<usize> = (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(0..facts.len())).collect();
            let mut refs: Vec<FactRef> = cited.iter().map(|&c| facts[c].0.clone()).collect();
            refs.sort();
            refs.dedup();
            let text = match cited.first() {
                Some(&c) => format!("Listen. {}", facts[c].1),
                None => "I have nothing more to say.".to_string(),
            };
            UtteranceNode::new(id, speaker, text).with_facts(refs)
        } else {
            UtteranceNode::new(id, PLAYER, pick(rng, &player_lines))
        };
        if let Some(p) = parent {
            edges.push(Edge::new(format!("n{p}"), node.id.clone()));
        }
        nodes.push(node);
    }
    for _ in 0..rng.gen_range(0..=2) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let e = Edge::new(format!("n{a}"), format!("n{b}"));
        if a != b && !edges.contains(&e) {
            edges.push(e);
        }
    }
    DialogueTree::from_parts("n0", nodes, edges).expect("node ids are distinct")
}

fn quest_of(spec: &DialogueSpec) -> QuestSpec {
    QuestSpec {
        synopsis: statements(&format!("{}#synopsis", spec.quest_name), &[format!("{} is a side quest.", spec.quest_name)]),
        ..spec.quest_spec()
    }
}

/// `quests` quests with one or two dialogues each, trees of at most
/// `max_nodes` nodes. Dialogue ids are `q{quest}d{dialogue}`.
pub fn corpus(quests: usize, max_nodes: usize, seed: u64) -> Corpus {
    let mut out = Corpus::default();
    for q in 0..quests {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[q as u64]));
        let spec = random_spec(&mut rng, q);
        out.quests.push(quest_of(&spec));
        for d in 0..rng.gen_range(1..=2) {
            let tree = random_tree(&mut rng, &spec, max_nodes);
            out.dialogues.push(Dialogue {
                id: format!("q{q:02}d{d}"),
                spec: spec.clone(),
                tree,
            });
        }
    }
    out
}

/// The first `items` next-utterance tasks (one variant per target) drawn
/// from the corpus dialogues in order.
pub fn nup_tasks(corpus: &Corpus, items: usize, seed: u64) -> Vec<GenerationTask> {
    corpus
        .dialogues
        .iter()
        .flat_map(|d| build_nup_items(d, 1, seed))
        .take(items)
        .collect()
}

/// A fixed small specification for demos and smoke tests.
pub fn demo_spec() -> DialogueSpec {
    DialogueSpec {
        quest_name: "The Lost Son".into(),
        in_objectives: vec![Objective {
            name: "Find Agnes's son".into(),
            game_log: statements(
                "Find Agnes's son#log",
                &["Agnes Needham's son Tobin has gone missing.", "Tobin was last seen heading into the hills."],
            ),
            walkthrough: statements(
                "Find Agnes's son#walkthrough",
                &["Speak with Agnes at the village gate.", "She offers a silver locket as a reward."],
            ),
        }],
        out_objectives: vec![Objective {
            name: "Search the hills".into(),
            game_log: statements("Search the hills#log", &["A Raptidon nest lies in the hills."]),
            walkthrough: Vec::new(),
        }],
        bios: vec![
            BiographyPassage {
                entity: "Agnes Needham".into(),
                statements: statements(
                    "Agnes Needham",
                    &["Agnes Needham keeps the village gate.", "She is an anxious and protective mother."],
                ),
            },
            BiographyPassage {
                entity: "Raptidon".into(),
                statements: statements(
                    "Raptidon",
                    &["Raptidons are reptile-like predators.", "They hunt in packs at dusk."],
                ),
            },
        ],
        participants: vec![Participant::npc("Agnes Needham"), Participant::player(PLAYER)],
    }
}

/// Opening line matching [`demo_spec`].
pub fn demo_start() -> UtteranceNode {
    UtteranceNode::new("start", "Agnes Needham", "Please, you have to help me find my boy!")
        .with_facts(vec![FactRef::new("Find Agnes's son#log", 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_corpus, validate_dialogue};

    #[test]
    fn corpus_validates_without_errors() {
        let c = corpus(45, 8, 3);
        assert_eq!(c.quests.len(), 45);
        let report = validate_corpus(&c);
        assert!(!report.has_errors(), "{:?}", report.errors().collect::<Vec<_>>());
        assert!(report.is_clean(), "{:?}", report.findings);
    }

    #[test]
    fn deterministic() {
        assert_eq!(corpus(5, 6, 9), corpus(5, 6, 9));
        assert_ne!(corpus(5, 6, 9), corpus(5, 6, 10));
    }

    #[test]
    fn demo_spec_is_clean() {
        let tree = DialogueTree::single(demo_start());
        assert!(validate_dialogue(&demo_spec(), &tree).is_clean());
    }

    #[test]
    fn nup_tasks_have_gold() {
        let c = corpus(10, 8, 1);
        let tasks = nup_tasks(&c, 20, 1);
        assert_eq!(tasks.len(), 20);
        assert!(tasks.iter().all(|t| t.gold_target.is_some()));
    }
}
