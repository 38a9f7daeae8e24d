//! Long-horizon model routing for multi-turn dialogue.
//!
//! The crate is organised bottom-up:
//!
//! * [`dialogue`]: dialogue state, checklists, task files and the model catalog.
//! * [`cost`] and [`reward`]: cache-aware billing in exact pico-USD and the
//!   per-turn quality / combined / ratio rewards.
//! * [`env`]: the environment contract, tabular fixtures and generators.
//! * [`search`]: UCT tree search, the greedy router, the brute-force oracle
//!   and search-dataset generation.
//! * [`retrieval`]: hashed text embeddings and exact nearest-neighbour lookup
//!   used for future-state approximation.
//! * [`policy`]: the trainable router (encoder, gated fusion, classifier) with
//!   analytic gradients and behaviour-cloning training.
//! * [`baselines`], [`router`] and [`eval`]: reference routers, the common
//!   router interface, episodes and metrics.
//! * [`gateway`]: an optional chat-completions backend exposing the same
//!   environment contract.
//! * [`config`]: the run configuration file schema.

pub mod baselines;
pub mod config;
pub mod cost;
pub mod dialogue;
pub mod env;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod policy;
pub mod retrieval;
pub mod reward;
pub mod router;
pub mod search;
pub mod seed;

pub use cost::{CostParams, Money, PriceCard};
pub use dialogue::{Checklist, ChecklistScore, DialogueState, ModelId, ModelSpec, Points, TaskSpec, Turn};
pub use env::{Environment, NextInput, Position, ResponseOutcome};
pub use error::{Error, Result};
pub use reward::{RewardKind, RewardSpec, TurnReward};
pub use search::{SearchConfig, SearchRecord};
