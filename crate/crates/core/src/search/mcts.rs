use super::{argmax, discounted_return, greedy_route, q_update, uct_score, SearchConfig};
use crate::dialogue::ModelId;
use crate::env::{transition, Environment, Position};
use crate::error::{Error, Result};
use crate::reward::RewardSpec;
use crate::seed;

struct Edge {
    child: Option<usize>,
    reward: f64,
    q: f64,
    visits: u32,
}

struct Node {
    env: Box<dyn Environment>,
    pos: Position,
    terminal: bool,
    visits: u32,
    edges: Vec<Edge>,
}

/// Read-only snapshot of one tree node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeView {
    pub visits: u32,
    pub q: Vec<f64>,
    pub action_visits: Vec<u32>,
    pub children: Vec<Option<usize>>,
    pub terminal: bool,
}

/// The (node, action, V) triples updated by one iteration, root first.
#[derive(Clone, Debug, PartialEq)]
pub struct Backup {
    pub path: Vec<(usize, ModelId, f64)>,
}

/// A UCT search tree rooted at one dialogue state. Every node owns a forked
/// environment positioned at its state, so the caller's handle is never touched.
pub struct Mcts<'a> {
    nodes: Vec<Node>,
    config: &'a SearchConfig,
    reward: &'a RewardSpec,
    actions: usize,
    streams: u64,
}

impl<'a> Mcts<'a> {
    pub fn new(
        env: &dyn Environment,
        root: &Position,
        config: &'a SearchConfig,
        reward: &'a RewardSpec,
    ) -> Result<Self> {
        config.validate()?;
        if root.is_terminal(config.max_turns) {
            return Err(Error::Search("cannot plan from a terminal state".into()));
        }
        let actions = env.num_actions();
        let mut tree = Mcts { nodes: Vec::new(), config, reward, actions, streams: 0 };
        let root_env = env.fork(tree.next_stream());
        tree.push(root_env, root.clone());
        Ok(tree)
    }

    fn next_stream(&mut self) -> u64 {
        self.streams += 1;
        seed::child_seed(self.config.seed, self.streams)
    }

    fn push(&mut self, env: Box<dyn Environment>, pos: Position) -> usize {
        let terminal = pos.is_terminal(self.config.max_turns);
        let edges = (0..self.actions).map(|_| Edge { child: None, reward: 0.0, q: 0.0, visits: 0 }).collect();
        self.nodes.push(Node { env, pos, terminal, visits: 0, edges });
        self.nodes.len() - 1
    }

    fn select_action(&self, node: usize) -> usize {
        let n = &self.nodes[node];
        let scores: Vec<f64> =
            n.edges.iter().map(|e| uct_score(e.q, n.visits, e.visits, self.config.exploration)).collect();
        argmax(&scores)
    }

    /// Greedy rollout from `pos` until termination; returns per-turn rewards.
    fn rollout(&mut self, env: &dyn Environment, pos: &Position) -> Result<Vec<f64>> {
        let mut rewards = Vec::new();
        let mut sim = env.fork(self.next_stream());
        let mut pos = pos.clone();
        while !pos.is_terminal(self.config.max_turns) {
            let action = greedy_route(sim.as_ref(), &pos, self.reward)?;
            let step = transition(sim.as_mut(), &pos, action, self.reward)?;
            rewards.push(step.reward.value);
            pos = step.next;
        }
        Ok(rewards)
    }

    /// One selection / expansion / simulation / backpropagation pass.
    pub fn iterate(&mut self) -> Result<Backup> {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut rewards: Vec<f64> = Vec::new();
        let mut current = 0;
        let mut expanded = false;
        while !self.nodes[current].terminal {
            let untried = self.nodes[current].edges.iter().position(|e| e.child.is_none());
            if let Some(action) = untried {
                let stream = self.next_stream();
                let mut env = self.nodes[current].env.fork(stream);
                let step = transition(env.as_mut(), &self.nodes[current].pos, ModelId(action), self.reward)?;
                let child = self.push(env, step.next);
                let edge = &mut self.nodes[current].edges[action];
                edge.child = Some(child);
                edge.reward = step.reward.value;
                path.push((current, action));
                rewards.push(step.reward.value);
                current = child;
                expanded = true;
                break;
            }
            let action = self.select_action(current);
            let edge = &self.nodes[current].edges[action];
            path.push((current, action));
            rewards.push(edge.reward);
            current = edge.child.expect("fully expanded");
        }
        if expanded && !self.nodes[current].terminal {
            let env = self.nodes[current].env.fork(0);
            let pos = self.nodes[current].pos.clone();
            rewards.extend(self.rollout(env.as_ref(), &pos)?);
        }
        let gamma = self.config.discount;
        let mut backup = Backup { path: Vec::with_capacity(path.len()) };
        for (i, &(node, action)) in path.iter().enumerate() {
            let value = discounted_return(&rewards[i..], gamma);
            let n = &mut self.nodes[node];
            n.visits += 1;
            let edge = &mut n.edges[action];
            edge.visits += 1;
            edge.q = q_update(edge.q, edge.visits, value);
            backup.path.push((node, ModelId(action), value));
        }
        Ok(backup)
    }

    pub fn run(&mut self) -> Result<()> {
        for _ in 0..self.config.simulations {
            self.iterate()?;
        }
        Ok(())
    }

    /// Q(s_root, ·).
    pub fn root_q(&self) -> Vec<f64> {
        self.nodes[0].edges.iter().map(|e| e.q).collect()
    }

    /// argmax_a Q(s_root, a) over visited actions, ties to the lowest index.
    pub fn best_action(&self) -> ModelId {
        let root = &self.nodes[0];
        let q: Vec<f64> = root.edges.iter().map(|e| if e.visits > 0 { e.q } else { f64::NEG_INFINITY }).collect();
        ModelId(argmax(&q))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, index: usize) -> NodeView {
        let n = &self.nodes[index];
        NodeView {
            visits: n.visits,
            q: n.edges.iter().map(|e| e.q).collect(),
            action_visits: n.edges.iter().map(|e| e.visits).collect(),
            children: n.edges.iter().map(|e| e.child).collect(),
            terminal: n.terminal,
        }
    }
}

/// Plans one decision: K iterations from `root`, then the root action with the
/// highest Q. Returns the action and the root Q vector.
pub fn plan_action(
    env: &dyn Environment,
    root: &Position,
    config: &SearchConfig,
    reward: &RewardSpec,
) -> Result<(ModelId, Vec<f64>)> {
    let mut tree = Mcts::new(env, root, config, reward)?;
    tree.run()?;
    Ok((tree.best_action(), tree.root_q()))
}
