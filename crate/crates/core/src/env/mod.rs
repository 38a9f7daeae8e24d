//! The environment contract: candidate response plus judged checklist, the
//! simulated user's next turn, and cheap forking for simulations.

mod synthetic;
mod tabular;

pub use synthetic::{random_tree, RandomTreeSpec};
pub use tabular::{load_env, ArmDef, EnvNode, Successor, TabularConfig, TabularEnv};

pub use crate::dialogue::NextInput;
use crate::dialogue::{ChecklistScore, DialogueState, Exchange, ModelId, Points};
use crate::error::Result;
use crate::reward::{RewardSpec, TurnReward};

/// What the environment returns for one model response: the response itself
/// and the judged cumulative checklist r^(t) of the trajectory including it.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseOutcome {
    pub text: String,
    pub tokens: u64,
    pub score: ChecklistScore,
}

/// A dialogue environment handle. A handle follows one episode at a time:
/// `reset`, then alternating `step_response` / `step_user` until the user
/// returns [`NextInput::Terminal`].
pub trait Environment: Send + Sync {
    fn num_actions(&self) -> usize;

    fn task_ids(&self) -> Vec<String>;

    /// True when responses and user turns are pure functions of the action
    /// sequence.
    fn is_deterministic(&self) -> bool;

    /// Horizon T_max in turns.
    fn max_turns(&self) -> usize;

    fn reset(&mut self, task_id: &str) -> Result<DialogueState>;

    /// Plays `action` on the pending input of `state` and judges the result.
    fn step_response(&mut self, state: &DialogueState, action: ModelId) -> Result<ResponseOutcome>;

    /// Produces the user's reply to the response generated by the preceding
    /// `step_response` on the same `state`.
    fn step_user(&mut self, state: &DialogueState) -> Result<NextInput>;

    /// An independent copy positioned at the same point of the episode. Random
    /// draws of the copy come from substream `stream` of this handle's seed, so
    /// distinct streams diverge and equal streams replay identically.
    fn fork(&self, stream: u64) -> Box<dyn Environment>;
}

/// A dialogue state together with its current checklist total R_{t-1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Position {
    pub state: DialogueState,
    pub points: Points,
    pub score: Option<ChecklistScore>,
}

impl Position {
    pub fn start(state: DialogueState) -> Self {
        Position { state, points: Points::ZERO, score: None }
    }

    pub fn is_terminal(&self, max_turns: usize) -> bool {
        self.state.is_closed() || self.state.history.len() >= max_turns
    }
}

/// Result of one full turn on an environment handle.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next: Position,
    pub reward: TurnReward,
    pub outcome: ResponseOutcome,
}

/// Runs one turn: response, judgement, billing, then the user's reply.
pub fn transition(
    env: &mut dyn Environment,
    pos: &Position,
    action: ModelId,
    reward: &RewardSpec,
) -> Result<Transition> {
    let outcome = env.step_response(&pos.state, action)?;
    let now = outcome.score.total();
    let turn_reward = reward.evaluate(&pos.state, action, outcome.tokens, pos.points, now)?;
    let next_input = env.step_user(&pos.state)?;
    let state = pos.state.append_exchange(
        Exchange { response: outcome.text.clone(), response_tokens: outcome.tokens, model_id: action },
        next_input,
        env.num_actions(),
    )?;
    Ok(Transition {
        next: Position { state, points: now, score: Some(outcome.score.clone()) },
        reward: turn_reward,
        outcome,
    })
}
