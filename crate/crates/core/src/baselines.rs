//! Search-free reference routers: uniform random and k-nearest-neighbour over
//! historical per-model rewards. Fixed-model routing lives in
//! [`crate::router::FixedRouter`].

use std::collections::BTreeMap;

use rand::Rng;

use crate::dialogue::ModelId;
use crate::env::{transition, Environment, Position};
use crate::error::{Error, Result};
use crate::retrieval::{cosine, Embedder, Embedding};
use crate::reward::RewardSpec;
use crate::search::{argmax, immediate_rewards, SearchRecord};

/// Uniform over `0..n` from the caller's stream.
pub fn random_route(n: usize, rng: &mut impl Rng) -> ModelId {
    assert!(n >= 1, "random_route needs at least one model");
    ModelId(rng.random_range(0..n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnEntry {
    pub embedding: Embedding,
    pub rewards: Vec<f64>,
}

/// Observed immediate reward of every model at previously seen states.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnHistory {
    actions: usize,
    entries: Vec<KnnEntry>,
}

impl KnnHistory {
    pub fn new(actions: usize, entries: Vec<KnnEntry>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|e| e.rewards.len() != actions) {
            return Err(Error::Dimension { expected: actions, got: bad.rewards.len() });
        }
        Ok(KnnHistory { actions, entries })
    }

    /// Replays each task's recorded actions and, at every visited state,
    /// probes all models for their immediate reward.
    pub fn from_records(
        env: &dyn Environment,
        records: &[SearchRecord],
        reward: &RewardSpec,
        embedder: &dyn Embedder,
    ) -> Result<Self> {
        let mut by_task: BTreeMap<&str, Vec<&SearchRecord>> = BTreeMap::new();
        for r in records {
            by_task.entry(r.task_id.as_str()).or_default().push(r);
        }
        let mut entries = Vec::with_capacity(records.len());
        for (i, (task, mut rows)) in by_task.into_iter().enumerate() {
            rows.sort_by_key(|r| r.turn);
            let mut live = env.fork(i as u64);
            let mut pos = Position::start(live.reset(task)?);
            for row in rows {
                if pos.state.is_closed() {
                    break;
                }
                entries.push(KnnEntry {
                    embedding: embedder.embed(&pos.state.canonical_render()),
                    rewards: immediate_rewards(live.as_ref(), &pos, reward)?,
                });
                if row.action >= env.num_actions() {
                    return Err(Error::InvalidModel { id: row.action, len: env.num_actions() });
                }
                pos = transition(live.as_mut(), &pos, ModelId(row.action), reward)?.next;
            }
        }
        KnnHistory::new(env.num_actions(), entries)
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn entries(&self) -> &[KnnEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mean reward vector of the `k` most similar entries, then argmax. Ties in
/// similarity keep history order; ties in the mean go to the lowest index.
pub fn knn_route(history: &KnnHistory, query: &Embedding, k: usize) -> Result<ModelId> {
    if history.is_empty() {
        return Err(Error::Retrieval("knn history is empty".into()));
    }
    if k == 0 {
        return Err(Error::Config("knn k must be >= 1".into()));
    }
    let mut ranked: Vec<(usize, f64)> =
        history.entries.iter().enumerate().map(|(i, e)| (i, cosine(&query.0, &e.embedding.0))).collect();
    // stable sort keeps earlier entries first among equal similarities
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let chosen = &ranked[..k.min(ranked.len())];
    let mut mean = vec![0.0; history.actions];
    for &(i, _) in chosen {
        for (m, r) in mean.iter_mut().zip(&history.entries[i].rewards) {
            *m += r;
        }
    }
    let count = chosen.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    Ok(ModelId(argmax(&mean)))
}
