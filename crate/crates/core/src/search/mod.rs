//! Trajectory search over routing decisions.
//!
//! [`plan_action`] runs UCT tree search with greedy rollouts from a root
//! state; [`greedy_route`] is the one-step baseline and rollout policy;
//! [`brute_force_oracle`] enumerates every action sequence on deterministic
//! environments; [`generate_dataset`] replans at every turn of each task and
//! records the chosen actions.

mod dataset;
mod mcts;
mod oracle;

pub use dataset::{generate_dataset, read_records, write_records, Planner, SearchRecord};
pub use mcts::{plan_action, Backup, Mcts, NodeView};
pub use oracle::{brute_force_oracle, OraclePlan, ORACLE_BUDGET};

use serde::{Deserialize, Serialize};

use crate::dialogue::ModelId;
use crate::env::{transition, Environment, Position};
use crate::error::{Error, Result};
use crate::reward::RewardSpec;

/// K, c, γ, T_max and the seed of a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub simulations: usize,
    pub exploration: f64,
    pub discount: f64,
    pub max_turns: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { simulations: 10, exploration: 2.0, discount: 0.999, max_turns: 8, seed: 0 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.simulations < 1 {
            return Err(Error::Config("search.simulations must be >= 1".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config("search.discount must lie in (0, 1]".into()));
        }
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return Err(Error::Config("search.exploration must be a finite value >= 0".into()));
        }
        if self.max_turns < 1 {
            return Err(Error::Config("search.max_turns must be >= 1".into()));
        }
        Ok(())
    }
}

/// Q + c·sqrt(ln N(s) / (N(s,a) + 1)).
pub fn uct_score(q: f64, node_visits: u32, action_visits: u32, exploration: f64) -> f64 {
    if exploration == 0.0 {
        return q;
    }
    q + exploration * ((node_visits as f64).ln() / (action_visits as f64 + 1.0)).sqrt()
}

/// Running-mean update with the visit count already incremented.
pub fn q_update(q: f64, visits_after: u32, value: f64) -> f64 {
    q + (value - q) / visits_after as f64
}

/// Σ_k γ^k r_k.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    // Horner form, evaluated back to front.
    rewards.iter().rev().fold(0.0, |acc, &r| r + discount * acc)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Immediate reward of every action from `pos`, each on its own fork.
pub fn immediate_rewards(env: &dyn Environment, pos: &Position, reward: &RewardSpec) -> Result<Vec<f64>> {
    if pos.state.is_closed() {
        return Err(Error::Search("cannot route a terminal state".into()));
    }
    (0..env.num_actions())
        .map(|a| {
            let mut probe = env.fork(a as u64);
            Ok(transition(probe.as_mut(), pos, ModelId(a), reward)?.reward.value)
        })
        .collect()
}

/// One-step greedy routing: the action with the best immediate reward.
pub fn greedy_route(env: &dyn Environment, pos: &Position, reward: &RewardSpec) -> Result<ModelId> {
    Ok(ModelId(argmax(&immediate_rewards(env, pos, reward)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uct_vectors() {
        // 0.5 + 2*sqrt(ln(10)/4), evaluated independently
        let expected = 0.5 + 2.0 * (std::f64::consts::LN_10 / 4.0).sqrt();
        assert!((expected - 2.017428).abs() < 1e-6);
        assert!((uct_score(0.5, 10, 3, 2.0) - expected).abs() < 1e-12);
        assert_eq!(uct_score(0.7, 1, 0, 2.0), 0.7);
        assert_eq!(uct_score(0.3, 17, 4, 0.0), 0.3);
    }

    #[test]
    fn q_update_is_running_mean() {
        // mean of four prior returns 0.4 plus 0.9 is 2.5/5
        assert!((q_update(0.4, 5, 0.9) - 0.5).abs() < 1e-15);
        assert_eq!(q_update(0.0, 1, 0.7), 0.7);
        let q = q_update(q_update(0.0, 1, 1.0), 2, 0.0);
        assert_eq!(q, 0.5);
    }

    #[test]
    fn discounted_return_vectors() {
        assert_eq!(discounted_return(&[1.0, 0.5, 0.0], 1.0), 1.5);
        let direct = 1.0 + 0.999 * 0.5 + 0.999f64.powi(2) * 0.25;
        assert!((direct - 1.74900025).abs() < 1e-12);
        assert!((discounted_return(&[1.0, 0.5, 0.25], 0.999) - 1.74900025).abs() < 1e-12);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[5.0]), 0);
    }
}
