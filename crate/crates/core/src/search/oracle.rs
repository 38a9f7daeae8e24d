use super::discounted_return;
use crate::dialogue::ModelId;
use crate::env::{transition, Environment, Position};
use crate::error::{Error, Result};
use crate::reward::RewardSpec;

/// Maximum number of action sequences the oracle will enumerate.
pub const ORACLE_BUDGET: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OraclePlan {
    /// An optimal sequence, lexicographically smallest among ties. It can be
    /// shorter than the horizon when the dialogue ends early.
    pub actions: Vec<ModelId>,
    pub value: f64,
}

/// Exhaustive search over every action sequence of up to `horizon` turns.
pub fn brute_force_oracle(
    env: &dyn Environment,
    start: &Position,
    horizon: usize,
    discount: f64,
    reward: &RewardSpec,
) -> Result<OraclePlan> {
    if !env.is_deterministic() {
        return Err(Error::Search("the oracle requires a deterministic environment".into()));
    }
    let sequences = (env.num_actions() as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if sequences > ORACLE_BUDGET {
        return Err(Error::OracleBudget { sequences, budget: ORACLE_BUDGET });
    }
    let mut best = OraclePlan { actions: Vec::new(), value: f64::NEG_INFINITY };
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    explore(env, start, horizon, discount, reward, &mut actions, &mut rewards, &mut best)?;
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn explore(
    env: &dyn Environment,
    pos: &Position,
    remaining: usize,
    discount: f64,
    reward: &RewardSpec,
    actions: &mut Vec<ModelId>,
    rewards: &mut Vec<f64>,
    best: &mut OraclePlan,
) -> Result<()> {
    if remaining == 0 || pos.state.is_closed() {
        let value = discounted_return(rewards, discount);
        // Depth-first in ascending action order: the first optimum found is the
        // lexicographically smallest.
        if value > best.value {
            *best = OraclePlan { actions: actions.clone(), value };
        }
        return Ok(());
    }
    for a in 0..env.num_actions() {
        let mut branch = env.fork(a as u64);
        let step = transition(branch.as_mut(), pos, ModelId(a), reward)?;
        actions.push(ModelId(a));
        rewards.push(step.reward.value);
        explore(branch.as_ref(), &step.next, remaining - 1, discount, reward, actions, rewards, best)?;
        actions.pop();
        rewards.pop();
    }
    Ok(())
}
