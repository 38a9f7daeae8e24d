//! A uniform interface over every routing strategy so episodes and reports
//! treat them alike.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{knn_route, random_route, KnnHistory};
use crate::dialogue::ModelId;
use crate::env::{Environment, Position};
use crate::error::{Error, Result};
use crate::policy::{route_policy, PolicyParams};
use crate::retrieval::{Embedder, HashingEmbedder, RetrievalIndex, RetrievalMode};
use crate::reward::RewardSpec;
use crate::search::{greedy_route, plan_action, SearchConfig, SearchRecord};

/// Chooses the model for the pending turn of `pos`. `env` is the live handle
/// at `pos`; routers that simulate fork it and never advance it. `rng` is the
/// episode's router stream.
pub trait Router: Send + Sync {
    fn name(&self) -> String;

    /// True when the choice depends on `rng`.
    fn is_stochastic(&self) -> bool;

    fn route(&self, env: &dyn Environment, pos: &Position, rng: &mut ChaCha8Rng) -> Result<ModelId>;
}

/// Router selection as written in configs and on the command line:
/// `fixed:<id>`, `random`, `greedy`, `knn[:k]`, `mcts`, `policy`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RouterKind {
    Fixed(usize),
    Random,
    Greedy,
    Knn(usize),
    Mcts,
    Policy,
}

pub const DEFAULT_KNN_K: usize = 5;

impl FromStr for RouterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown router `{s}` (expected fixed:<id>, random, greedy, knn[:k], mcts or policy)"
            ))
        };
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let number = |a: &str| a.parse::<usize>().map_err(|_| bad());
        Ok(match (head, arg) {
            ("fixed", Some(a)) => RouterKind::Fixed(number(a)?),
            ("random", None) => RouterKind::Random,
            ("greedy", None) => RouterKind::Greedy,
            ("knn", None) => RouterKind::Knn(DEFAULT_KNN_K),
            ("knn", Some(a)) => match number(a)? {
                0 => return Err(bad()),
                k => RouterKind::Knn(k),
            },
            ("mcts", None) => RouterKind::Mcts,
            ("policy", None) => RouterKind::Policy,
            _ => return Err(bad()),
        })
    }
}

impl TryFrom<String> for RouterKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RouterKind> for String {
    fn from(k: RouterKind) -> String {
        k.to_string()
    }
}

impl fmt::Display for RouterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouterKind::Fixed(i) => write!(f, "fixed:{i}"),
            RouterKind::Random => f.write_str("random"),
            RouterKind::Greedy => f.write_str("greedy"),
            RouterKind::Knn(k) => write!(f, "knn:{k}"),
            RouterKind::Mcts => f.write_str("mcts"),
            RouterKind::Policy => f.write_str("policy"),
        }
    }
}

pub struct FixedRouter(pub ModelId);

impl Router for FixedRouter {
    fn name(&self) -> String {
        format!("fixed:{}", self.0)
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn route(&self, env: &dyn Environment, _: &Position, _: &mut ChaCha8Rng) -> Result<ModelId> {
        if self.0 .0 >= env.num_actions() {
            return Err(Error::InvalidModel { id: self.0 .0, len: env.num_actions() });
        }
        Ok(self.0)
    }
}

pub struct RandomRouter;

impl Router for RandomRouter {
    fn name(&self) -> String {
        "random".into()
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn route(&self, env: &dyn Environment, _: &Position, rng: &mut ChaCha8Rng) -> Result<ModelId> {
        Ok(random_route(env.num_actions(), rng))
    }
}

pub struct GreedyRouter {
    pub reward: RewardSpec,
}

impl Router for GreedyRouter {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn route(&self, env: &dyn Environment, pos: &Position, _: &mut ChaCha8Rng) -> Result<ModelId> {
        greedy_route(env, pos, &self.reward)
    }
}

pub struct KnnRouter {
    pub history: Arc<KnnHistory>,
    pub embedder: HashingEmbedder,
    pub k: usize,
}

impl Router for KnnRouter {
    fn name(&self) -> String {
        format!("knn:{}", self.k)
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn route(&self, _: &dyn Environment, pos: &Position, _: &mut ChaCha8Rng) -> Result<ModelId> {
        knn_route(&self.history, &self.embedder.embed(&pos.state.canonical_render()), self.k)
    }
}

/// Plans every turn with a fresh search tree.
pub struct MctsRouter {
    pub config: SearchConfig,
    pub reward: RewardSpec,
}

impl Router for MctsRouter {
    fn name(&self) -> String {
        "mcts".into()
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn route(&self, env: &dyn Environment, pos: &Position, rng: &mut ChaCha8Rng) -> Result<ModelId> {
        let config = SearchConfig { seed: rng.random(), ..self.config.clone() };
        Ok(plan_action(env, pos, &config, &self.reward)?.0)
    }
}

pub struct PolicyRouter {
    pub params: Arc<PolicyParams>,
    pub index: Arc<RetrievalIndex>,
    pub embedder: HashingEmbedder,
    pub mode: RetrievalMode,
}

impl Router for PolicyRouter {
    fn name(&self) -> String {
        "policy".into()
    }

    fn is_stochastic(&self) -> bool {
        self.mode == RetrievalMode::Random
    }

    fn route(&self, env: &dyn Environment, pos: &Position, rng: &mut ChaCha8Rng) -> Result<ModelId> {
        let action =
            route_policy(&self.params, &self.index, &self.embedder, &pos.state.canonical_render(), self.mode, rng)?;
        if action.0 >= env.num_actions() {
            return Err(Error::InvalidModel { id: action.0, len: env.num_actions() });
        }
        Ok(action)
    }
}

/// What a router may need beyond its kind.
pub struct RouterInputs<'a> {
    pub reward: &'a RewardSpec,
    pub search: &'a SearchConfig,
    /// Search dataset: the KNN history source and the policy's retrieval corpus.
    pub dataset: Option<&'a [SearchRecord]>,
    pub policy: Option<(PolicyParams, RetrievalMode)>,
}

pub fn build_router(kind: RouterKind, env: &dyn Environment, inputs: RouterInputs<'_>) -> Result<Box<dyn Router>> {
    let need_dataset =
        || inputs.dataset.ok_or_else(|| Error::Config(format!("router `{kind}` needs a search dataset (`dataset`)")));
    Ok(match kind {
        RouterKind::Fixed(i) => {
            if i >= env.num_actions() {
                return Err(Error::Config(format!(
                    "router `{kind}`: the environment has {} actions",
                    env.num_actions()
                )));
            }
            Box::new(FixedRouter(ModelId(i)))
        }
        RouterKind::Random => Box::new(RandomRouter),
        RouterKind::Greedy => Box::new(GreedyRouter { reward: inputs.reward.clone() }),
        RouterKind::Mcts => Box::new(MctsRouter { config: inputs.search.clone(), reward: inputs.reward.clone() }),
        RouterKind::Knn(k) => {
            let embedder = HashingEmbedder::default();
            let history = KnnHistory::from_records(env, need_dataset()?, inputs.reward, &embedder)?;
            Box::new(KnnRouter { history: Arc::new(history), embedder, k })
        }
        RouterKind::Policy => {
            let records = need_dataset()?;
            let (params, mode) = inputs
                .policy
                .ok_or_else(|| Error::Config("router `policy` needs trained parameters (`params`)".into()))?;
            let embedder = HashingEmbedder::default();
            if params.shape.input_dim != embedder.dim() || params.shape.actions != env.num_actions() {
                return Err(Error::Config(format!(
                    "policy parameters expect {} features and {} actions; the setup has {} and {}",
                    params.shape.input_dim,
                    params.shape.actions,
                    embedder.dim(),
                    env.num_actions()
                )));
            }
            let index = RetrievalIndex::build(records, &embedder)?;
            Box::new(PolicyRouter { params: Arc::new(params), index: Arc::new(index), embedder, mode })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn router_names_round_trip() {
        for s in ["fixed:0", "fixed:12", "random", "greedy", "knn:3", "mcts", "policy"] {
            assert_eq!(s.parse::<RouterKind>().unwrap().to_string(), s);
        }
        assert_eq!("knn".parse::<RouterKind>().unwrap(), RouterKind::Knn(DEFAULT_KNN_K));
        for s in ["", "fixed", "fixed:x", "knn:0", "oracle", "random:1"] {
            assert!(s.parse::<RouterKind>().is_err(), "{s}");
        }
        let json: RouterKind = serde_json::from_str("\"fixed:1\"").unwrap();
        assert_eq!(json, RouterKind::Fixed(1));
    }
}
