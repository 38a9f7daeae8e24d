//! Scripted environments defined by a JSON node graph.
//!
//! ```json
//! {"checklist_n": 2, "actions": 2, "start": "q1", "max_turns": 8,
//!  "nodes": {"q1": {"user": "...", "user_tokens": 12,
//!                   "arms": [{"response": "...", "response_tokens": 40,
//!                             "scores": [1, 0], "next": "q2"}, ...]},
//!            "end": {"user": "", "user_tokens": 0, "terminal": true}}}
//! ```
//!
//! `start` is either a node id (one task named after it) or a map from task id
//! to node id. An arm moves to `next`, samples from `next_dist`, or ends the
//! dialogue when it has neither.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, NextInput, ResponseOutcome};
use crate::dialogue::{ChecklistScore, DialogueState, ModelId};
use crate::error::{read_to_string, Error, Result};
use crate::seed;

const DEFAULT_MAX_TURNS: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    checklist_n: usize,
    actions: usize,
    start: StartFile,
    nodes: BTreeMap<String, NodeFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_turns: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    checklist: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum StartFile {
    Single(String),
    PerTask(BTreeMap<String, String>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    user: String,
    user_tokens: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    arms: Vec<ArmFile>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    terminal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmFile {
    response: String,
    response_tokens: u64,
    scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next_dist: Option<BTreeMap<String, f64>>,
}

/// Where an arm leads after the response.
#[derive(Clone, Debug, PartialEq)]
pub enum Successor {
    End,
    Node(usize),
    /// (node index, probability), in node-id order.
    Dist(Vec<(usize, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmDef {
    pub response: String,
    pub response_tokens: u64,
    pub score: ChecklistScore,
    pub next: Successor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvNode {
    pub id: String,
    pub user: String,
    pub user_tokens: u64,
    pub arms: Vec<ArmDef>,
    pub terminal: bool,
}

/// Validated, immutable environment definition.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularConfig {
    pub checklist_n: usize,
    pub actions: usize,
    pub max_turns: usize,
    pub nodes: Vec<EnvNode>,
    /// task id -> start node index, sorted by task id.
    pub starts: BTreeMap<String, usize>,
    pub checklist: Option<Vec<String>>,
}

impl TabularConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: EnvFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    fn from_file(file: EnvFile) -> Result<Self> {
        let cfg_err = |m: String| Error::EnvConfig(m);
        if file.actions == 0 {
            return Err(cfg_err("`actions` must be >= 1".into()));
        }
        if file.checklist_n == 0 {
            return Err(cfg_err("`checklist_n` must be >= 1".into()));
        }
        let index: BTreeMap<&str, usize> = file.nodes.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let resolve = |from: &str, id: &str| {
            index.get(id).copied().ok_or_else(|| cfg_err(format!("node `{from}` references undefined node `{id}`")))
        };
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for (id, node) in &file.nodes {
            if node.terminal && !node.arms.is_empty() {
                return Err(cfg_err(format!("terminal node `{id}` must not define arms")));
            }
            if !node.terminal && node.arms.len() != file.actions {
                return Err(cfg_err(format!(
                    "node `{id}` defines {} arms; expected {}",
                    node.arms.len(),
                    file.actions
                )));
            }
            let mut arms = Vec::with_capacity(node.arms.len());
            for (a, arm) in node.arms.iter().enumerate() {
                if arm.scores.len() != file.checklist_n {
                    return Err(cfg_err(format!(
                        "node `{id}` arm {a}: {} scores for a checklist of {}",
                        arm.scores.len(),
                        file.checklist_n
                    )));
                }
                let score =
                    ChecklistScore::new(&arm.scores).map_err(|e| cfg_err(format!("node `{id}` arm {a}: {e}")))?;
                let next = match (&arm.next, &arm.next_dist) {
                    (Some(_), Some(_)) => {
                        return Err(cfg_err(format!("node `{id}` arm {a}: both `next` and `next_dist` given")))
                    }
                    (Some(n), None) => Successor::Node(resolve(id, n)?),
                    (None, Some(dist)) => {
                        let mut entries = Vec::with_capacity(dist.len());
                        let mut total = 0.0;
                        for (n, &p) in dist {
                            if !(p >= 0.0 && p.is_finite()) {
                                return Err(cfg_err(format!("node `{id}` arm {a}: probability {p} for `{n}`")));
                            }
                            total += p;
                            entries.push((resolve(id, n)?, p));
                        }
                        if entries.is_empty() || (total - 1.0).abs() > 1e-9 {
                            return Err(cfg_err(format!(
                                "node `{id}` arm {a}: next_dist probabilities sum to {total}, not 1"
                            )));
                        }
                        Successor::Dist(entries)
                    }
                    (None, None) => Successor::End,
                };
                arms.push(ArmDef { response: arm.response.clone(), response_tokens: arm.response_tokens, score, next });
            }
            nodes.push(EnvNode {
                id: id.clone(),
                user: node.user.clone(),
                user_tokens: node.user_tokens,
                arms,
                terminal: node.terminal,
            });
        }
        let starts_raw = match file.start {
            StartFile::Single(node) => BTreeMap::from([(node.clone(), node)]),
            StartFile::PerTask(map) => map,
        };
        if starts_raw.is_empty() {
            return Err(cfg_err("`start` names no task".into()));
        }
        let mut starts = BTreeMap::new();
        for (task, node) in starts_raw {
            let i = resolve("start", &node)?;
            if nodes[i].terminal {
                return Err(cfg_err(format!("task `{task}` starts at terminal node `{node}`")));
            }
            starts.insert(task, i);
        }
        if let Some(items) = &file.checklist {
            if items.len() != file.checklist_n {
                return Err(cfg_err(format!(
                    "`checklist` has {} items; checklist_n is {}",
                    items.len(),
                    file.checklist_n
                )));
            }
        }
        let max_turns = file.max_turns.unwrap_or(DEFAULT_MAX_TURNS);
        if max_turns == 0 {
            return Err(cfg_err("`max_turns` must be >= 1".into()));
        }
        Ok(TabularConfig {
            checklist_n: file.checklist_n,
            actions: file.actions,
            max_turns,
            nodes,
            starts,
            checklist: file.checklist,
        })
    }

    /// Serialises back to the file schema.
    pub fn to_json(&self) -> Result<String> {
        let id = |i: usize| self.nodes[i].id.clone();
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let arms = n
                    .arms
                    .iter()
                    .map(|a| {
                        let (next, next_dist) = match &a.next {
                            Successor::End => (None, None),
                            Successor::Node(i) => (Some(id(*i)), None),
                            Successor::Dist(d) => (None, Some(d.iter().map(|&(i, p)| (id(i), p)).collect())),
                        };
                        ArmFile {
                            response: a.response.clone(),
                            response_tokens: a.response_tokens,
                            scores: a.score.values(),
                            next,
                            next_dist,
                        }
                    })
                    .collect();
                (
                    n.id.clone(),
                    NodeFile { user: n.user.clone(), user_tokens: n.user_tokens, arms, terminal: n.terminal },
                )
            })
            .collect();
        let file = EnvFile {
            checklist_n: self.checklist_n,
            actions: self.actions,
            start: StartFile::PerTask(self.starts.iter().map(|(t, &i)| (t.clone(), id(i))).collect()),
            nodes,
            max_turns: Some(self.max_turns),
            checklist: self.checklist.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn is_deterministic(&self) -> bool {
        self.nodes.iter().flat_map(|n| &n.arms).all(|a| !matches!(a.next, Successor::Dist(_)))
    }
}

/// Reads and validates an environment file.
pub fn load_env(path: &Path) -> Result<TabularEnv> {
    let config = TabularConfig::from_json(&read_to_string(path)?).map_err(|e| match e {
        Error::Json(j) => Error::EnvConfig(format!("{}: {j}", path.display())),
        other => other,
    })?;
    Ok(TabularEnv::new(Arc::new(config), 0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    AwaitingResponse,
    AwaitingUser { arm: usize },
    Closed,
}

/// A handle on a [`TabularConfig`] with its own cursor and random stream.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    config: Arc<TabularConfig>,
    max_turns: usize,
    node: usize,
    depth: usize,
    phase: Phase,
    seed: u64,
    rng: ChaCha8Rng,
}

impl TabularEnv {
    pub fn new(config: Arc<TabularConfig>, seed: u64) -> Self {
        let max_turns = config.max_turns;
        TabularEnv { config, max_turns, node: 0, depth: 0, phase: Phase::Idle, seed, rng: seed::rng(seed) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.rng = seed::rng(seed);
        self
    }

    /// Caps the horizon below the file's `max_turns`.
    pub fn with_max_turns(mut self, max_turns: usize) -> Self {
        self.max_turns = max_turns.clamp(1, self.config.max_turns);
        self
    }

    pub fn config(&self) -> &TabularConfig {
        &self.config
    }

    fn check_depth(&self, state: &DialogueState) -> Result<()> {
        if state.history.len() != self.depth {
            return Err(Error::EnvState(format!(
                "state has {} completed turns but the handle is at depth {}",
                state.history.len(),
                self.depth
            )));
        }
        Ok(())
    }
}

impl Environment for TabularEnv {
    fn num_actions(&self) -> usize {
        self.config.actions
    }

    fn task_ids(&self) -> Vec<String> {
        self.config.starts.keys().cloned().collect()
    }

    fn is_deterministic(&self) -> bool {
        self.config.is_deterministic()
    }

    fn max_turns(&self) -> usize {
        self.max_turns
    }

    fn reset(&mut self, task_id: &str) -> Result<DialogueState> {
        let &start = self.config.starts.get(task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        self.node = start;
        self.depth = 0;
        self.phase = Phase::AwaitingResponse;
        let node = &self.config.nodes[start];
        Ok(DialogueState::new(task_id, node.user.clone(), node.user_tokens))
    }

    fn step_response(&mut self, state: &DialogueState, action: ModelId) -> Result<ResponseOutcome> {
        match self.phase {
            Phase::AwaitingResponse => {}
            Phase::Closed => return Err(Error::EnvState("dialogue has terminated".into())),
            Phase::Idle => return Err(Error::EnvState("step_response before reset".into())),
            Phase::AwaitingUser { .. } => {
                return Err(Error::EnvState("step_response called twice without step_user".into()))
            }
        }
        if state.is_closed() {
            return Err(Error::EnvState("state is terminal".into()));
        }
        self.check_depth(state)?;
        let arms = &self.config.nodes[self.node].arms;
        let arm = arms.get(action.0).ok_or(Error::InvalidModel { id: action.0, len: self.config.actions })?;
        self.phase = Phase::AwaitingUser { arm: action.0 };
        Ok(ResponseOutcome { text: arm.response.clone(), tokens: arm.response_tokens, score: arm.score.clone() })
    }

    fn step_user(&mut self, state: &DialogueState) -> Result<NextInput> {
        let Phase::AwaitingUser { arm } = self.phase else {
            return Err(Error::EnvState("step_user called before step_response".into()));
        };
        self.check_depth(state)?;
        let next = match &self.config.nodes[self.node].arms[arm].next {
            Successor::End => None,
            Successor::Node(i) => Some(*i),
            Successor::Dist(dist) => {
                let u: f64 = self.rng.random();
                let mut acc = 0.0;
                let mut pick = dist[dist.len() - 1].0;
                for &(i, p) in dist {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                Some(pick)
            }
        };
        self.depth += 1;
        match next {
            Some(i) if !self.config.nodes[i].terminal && self.depth < self.max_turns => {
                self.node = i;
                self.phase = Phase::AwaitingResponse;
                let node = &self.config.nodes[i];
                Ok(NextInput::Input { text: node.user.clone(), tokens: node.user_tokens })
            }
            _ => {
                self.phase = Phase::Closed;
                Ok(NextInput::Terminal)
            }
        }
    }

    fn fork(&self, stream: u64) -> Box<dyn Environment> {
        let seed = seed::child_seed(self.seed, stream);
        let mut copy = self.clone();
        copy.seed = seed;
        copy.rng = seed::rng(seed);
        Box::new(copy)
    }
}
