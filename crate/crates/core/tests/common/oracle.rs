//! Independent re-derivations used to check the metrics and the
//! suppression experiment.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use vcd_core::metrics::{Decision, ParsedAnswer};
use vcd_core::scene::{ObjectNode, Presence, Query, SceneGraph, Split};

pub struct Labeled {
    pub answer: ParsedAnswer,
    pub query: Query,
    pub graph: SceneGraph,
}

/// Random presence predictions: decision, reference and ground truth all
/// drawn independently.
pub fn random_predictions(n: usize, seed: u64) -> Vec<Labeled> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = [Split::Random, Split::Popular, Split::Adversarial];
    (0..n)
        .map(|_| {
            let present = rng.random_bool(0.5);
            let graph = SceneGraph::new(
                "s",
                vec![
                    ObjectNode::new("obj_1", "lamp", [0.0; 3], [1.0; 3]),
                    ObjectNode::new("obj_2", if present { "chair" } else { "sofa" }, [0.0; 3], [1.0; 3]),
                ],
            );
            let truth = if present { Presence::Present } else { Presence::Absent };
            let query = Query::presence("chair", truth, splits[rng.random_range(0..3)]);
            let decision = match rng.random_range(0..10) {
                0 => Decision::Unparseable,
                1..=5 => Decision::Yes,
                _ => Decision::No,
            };
            let referenced_object_ids = match (decision, rng.random_range(0..3)) {
                (Decision::Unparseable, _) | (_, 0) => vec![],
                (_, 1) => vec!["obj_2".into()],
                _ => vec!["obj_1".into()],
            };
            Labeled {
                answer: ParsedAnswer {
                    decision,
                    referenced_object_ids,
                    mentioned_objects: Default::default(),
                    mentioned_states: Default::default(),
                },
                query,
                graph,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub yes_rate: f64,
}

/// Counts by direct enumeration. A "Yes" on a present object counts as a
/// hit only when `grounded` accepts it; any other "Yes" on a present object
/// and every unparseable answer on one count as misses.
pub fn brute_force(items: &[Labeled], grounded: impl Fn(&Labeled) -> bool) -> BruteMetrics {
    let total = items.len();
    let present = |l: &&Labeled| l.query.ground_truth == Presence::Present;
    let said_yes = |l: &&Labeled| l.answer.decision == Decision::Yes;
    let hits = items
        .iter()
        .filter(present)
        .filter(said_yes)
        .filter(|l| grounded(l))
        .count();
    let false_alarms = items.iter().filter(|l| !present(l)).filter(said_yes).count();
    let correct_rejections = items
        .iter()
        .filter(|l| !present(l))
        .filter(|l| l.answer.decision == Decision::No)
        .count();
    let positives = items.iter().filter(present).count();
    let yes = items.iter().filter(said_yes).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(hits, hits + false_alarms);
    let recall = ratio(hits, positives);
    BruteMetrics {
        precision,
        recall,
        f1: if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        },
        accuracy: ratio(hits + correct_rejections, total),
        yes_rate: ratio(yes, total),
    }
}

#[derive(Debug, Deserialize)]
pub struct ChairCase {
    pub scene: Vec<(String, Vec<String>)>,
    pub answer: String,
    /// Hand count: (hallucinated, mentioned) objects.
    pub objects: (usize, usize),
    pub states: (usize, usize),
}

impl ChairCase {
    pub fn graph(&self) -> SceneGraph {
        SceneGraph::new(
            "c",
            self.scene
                .iter()
                .enumerate()
                .map(|(i, (c, states))| {
                    let mut o = ObjectNode::new(format!("obj_{}", i + 1), c.as_str(), [0.0; 3], [1.0; 3]);
                    o.states = states.clone();
                    o
                })
                .collect(),
        )
    }
}

pub fn chair_cases() -> Vec<ChairCase> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/chair_cases.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
