//! Random tree-shaped tabular environments for verification suites.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tabular::{ArmDef, EnvNode, Successor, TabularConfig};
use crate::dialogue::{ChecklistScore, Points};
use crate::seed;

const WORDS: &[&str] = &[
    "refund",
    "order",
    "address",
    "delivery",
    "invoice",
    "warranty",
    "battery",
    "screen",
    "password",
    "account",
    "symptom",
    "fever",
    "dosage",
    "allergy",
    "clinic",
    "recipe",
    "cocktail",
    "garden",
    "travel",
    "visa",
    "budget",
    "loan",
    "tax",
    "contract",
    "lease",
    "python",
    "compile",
    "error",
    "server",
    "database",
    "poem",
    "essay",
    "summary",
    "translate",
    "schedule",
    "meeting",
    "exercise",
    "diet",
    "sleep",
    "music",
    "camera",
    "lens",
    "flight",
    "hotel",
    "museum",
    "history",
    "physics",
    "chemistry",
    "biology",
    "market",
];

/// Shape of a generated environment.
#[derive(Clone, Debug)]
pub struct RandomTreeSpec {
    pub actions: usize,
    /// Turns until every branch ends.
    pub depth: usize,
    pub checklist_n: usize,
    pub tasks: usize,
    /// Prefix for node and task ids, so several generated envs never share ids.
    pub prefix: String,
    /// When set, every task's best first action must beat every other first
    /// action's best quality-only return by at least this many half-points.
    pub unique_margin_halves: Option<i64>,
}

impl Default for RandomTreeSpec {
    fn default() -> Self {
        RandomTreeSpec {
            actions: 3,
            depth: 4,
            checklist_n: 4,
            tasks: 1,
            prefix: "g".into(),
            unique_margin_halves: None,
        }
    }
}

/// Generates a deterministic tree environment. With `unique_margin_halves`
/// the seed is re-derived until every task satisfies the margin.
pub fn random_tree(seed: u64, spec: &RandomTreeSpec) -> TabularConfig {
    let mut attempt = 0u64;
    loop {
        let cfg = generate(seed::child_seed(seed, attempt), spec);
        let ok = match spec.unique_margin_halves {
            None => true,
            Some(margin) => cfg.starts.values().all(|&s| first_action_margin(&cfg, s) >= margin),
        };
        if ok {
            return cfg;
        }
        attempt += 1;
    }
}

fn phrase(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).expect("nonempty")).collect::<Vec<_>>().join(" ")
}

fn generate(seed: u64, spec: &RandomTreeSpec) -> TabularConfig {
    let mut rng = seed::rng(seed);
    let mut nodes: Vec<EnvNode> = Vec::new();
    let mut starts = BTreeMap::new();
    for t in 0..spec.tasks {
        let id = format!("{}t{t}", spec.prefix);
        let topic = phrase(&mut rng, 2);
        let root = build(&mut rng, spec, &mut nodes, id.clone(), &topic, 0, &ChecklistScore::zeros(spec.checklist_n));
        starts.insert(id, root);
    }
    // Node ids sort lexicographically in files; keep the same order here.
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id));
    let mut remap = vec![0; nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let mut sorted: Vec<EnvNode> = order.iter().map(|&i| nodes[i].clone()).collect();
    for node in &mut sorted {
        for arm in &mut node.arms {
            if let Successor::Node(i) = &mut arm.next {
                *i = remap[*i];
            }
        }
    }
    TabularConfig {
        checklist_n: spec.checklist_n,
        actions: spec.actions,
        max_turns: spec.depth,
        nodes: sorted,
        starts: starts.into_iter().map(|(k, v)| (k, remap[v])).collect(),
        checklist: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn build(
    rng: &mut ChaCha8Rng,
    spec: &RandomTreeSpec,
    nodes: &mut Vec<EnvNode>,
    id: String,
    topic: &str,
    depth: usize,
    score: &ChecklistScore,
) -> usize {
    let user = format!("{topic} {}", phrase(rng, 4));
    let index = nodes.len();
    nodes.push(EnvNode {
        id: id.clone(),
        user,
        user_tokens: rng.random_range(20..200),
        arms: Vec::new(),
        terminal: false,
    });
    let mut arms = Vec::with_capacity(spec.actions);
    for a in 0..spec.actions {
        let halves: Vec<f64> = score
            .values()
            .iter()
            .map(|&v| {
                let step: i64 = *[-1, 0, 0, 0, 1, 1, 2].choose(rng).expect("nonempty");
                ((v * 2.0) as i64 + step).clamp(0, 2) as f64 / 2.0
            })
            .collect();
        let child_score = ChecklistScore::new(&halves).expect("valid halves");
        let response = format!("model {a} says {}", phrase(rng, 5));
        let next = if depth + 1 < spec.depth {
            let child = build(rng, spec, nodes, format!("{id}.{a}"), topic, depth + 1, &child_score);
            Successor::Node(child)
        } else {
            Successor::End
        };
        arms.push(ArmDef { response, response_tokens: rng.random_range(50..500), score: child_score, next });
    }
    nodes[index].arms = arms;
    index
}

fn first_action_margin(cfg: &TabularConfig, start: usize) -> i64 {
    // Final total equals the undiscounted sum of quality rewards.
    let mut totals: Vec<i64> = cfg.nodes[start]
        .arms
        .iter()
        .map(|arm| match arm.next {
            Successor::Node(child) => final_best(cfg, child, arm.score.total()),
            _ => arm.score.total(),
        })
        .map(Points::halves)
        .collect();
    totals.sort_unstable_by(|a, b| b.cmp(a));
    match totals.as_slice() {
        [best, second, ..] => best - second,
        _ => i64::MAX,
    }
}

/// Best reachable final total when entering `node` with total `so_far`.
fn final_best(cfg: &TabularConfig, node: usize, so_far: Points) -> Points {
    if cfg.nodes[node].terminal {
        return so_far;
    }
    cfg.nodes[node]
        .arms
        .iter()
        .map(|arm| match arm.next {
            Successor::Node(child) => final_best(cfg, child, arm.score.total()),
            _ => arm.score.total(),
        })
        .max()
        .unwrap_or(so_far)
}
