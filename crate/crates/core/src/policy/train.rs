use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Example, Fusion, PolicyParams, PolicyShape};
use crate::dialogue::ModelId;
use crate::error::{Error, Result};
use crate::retrieval::{Embedder, HashingEmbedder, RetrievalIndex, RetrievalMode};
use crate::search::{argmax, Planner, SearchRecord};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub fusion: Fusion,
    pub retrieval: RetrievalMode,
    /// Which planner labelled the dataset.
    pub supervision: Planner,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 15,
            weight_decay: 0.01,
            seed: 0,
            hidden_dim: 64,
            fusion: Fusion::Gated,
            retrieval: RetrievalMode::Semantic,
            supervision: Planner::Mcts,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("train.{field} {why}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be nonnegative");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-dataset loss before training, then after each epoch.
    pub losses: Vec<f64>,
    pub steps: usize,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut PolicyParams, grad: &PolicyParams, lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let mut k = 0;
        for ((_, p), (_, g)) in params.blocks_mut().into_iter().zip(grad.blocks()) {
            for (w, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = BETA1 * *m + (1.0 - BETA1) * gi;
                *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
                let update = (*m / c1) / ((*v / c2).sqrt() + EPS);
                *w -= lr * (update + weight_decay * *w);
                k += 1;
            }
        }
    }
}

/// Behavior cloning with AdamW over shuffled mini-batches. The shuffle stream
/// is derived from `config.seed`, so equal inputs give equal outputs.
pub fn train_bc(
    params: &PolicyParams,
    examples: &[Example],
    config: &TrainConfig,
) -> Result<(PolicyParams, TrainReport)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    let mut params = params.clone();
    let mut losses = vec![params.bc_loss(examples)?];
    let mut opt = AdamW::new(params.num_params());
    let mut rng = seed::rng(seed::named_seed(config.seed, "shuffle"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut steps = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = params.bc_loss_grad(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, step {steps} (batch of {})",
                    batch.len()
                )));
            }
            opt.step(&mut params, &grad, config.learning_rate, config.weight_decay);
            steps += 1;
        }
        let loss = params.bc_loss(examples)?;
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss} after epoch {epoch} ({steps} steps)")));
        }
        losses.push(loss);
    }
    Ok((params, TrainReport { losses, steps }))
}

/// A policy trained on a search dataset, with the index it retrieves from.
#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub params: PolicyParams,
    pub index: RetrievalIndex,
    pub report: TrainReport,
}

/// Builds the retrieval index over `records`, featurizes them with the default
/// embedder and trains from a fresh initialisation drawn from `config.seed`.
pub fn train_from_records(records: &[SearchRecord], actions: usize, config: &TrainConfig) -> Result<TrainedPolicy> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    let embedder = HashingEmbedder::default();
    let index = RetrievalIndex::build(records, &embedder)?;
    let examples = prepare_examples(records, &index, &embedder, config.retrieval, config.seed);
    let shape =
        PolicyShape { input_dim: embedder.dim(), hidden_dim: config.hidden_dim, actions, fusion: config.fusion };
    let (params, report) = train_bc(&PolicyParams::init(shape, config.seed), &examples, config)?;
    Ok(TrainedPolicy { params, index, report })
}

/// Featurizes the dataset: state, approximate future per `mode`, label.
/// Semantic retrieval may return the record's own successor.
pub fn prepare_examples(
    records: &[SearchRecord],
    index: &RetrievalIndex,
    embedder: &dyn Embedder,
    mode: RetrievalMode,
    seed: u64,
) -> Vec<Example> {
    let mut rng = seed::rng(seed::named_seed(seed, "random-retrieval"));
    records
        .iter()
        .map(|r| {
            let future = index.approximate_future(&r.state, embedder, mode, &mut rng);
            Example {
                state: Array1::from(embedder.embed(&r.state).0),
                future: Array1::from(embedder.embed(&future).0),
                action: r.action,
            }
        })
        .collect()
}

/// argmax π(· | state, ŝ) with ŝ from `mode`; ties go to the lowest index.
pub fn route_policy(
    params: &PolicyParams,
    index: &RetrievalIndex,
    embedder: &dyn Embedder,
    state: &str,
    mode: RetrievalMode,
    rng: &mut impl Rng,
) -> Result<ModelId> {
    let future = index.approximate_future(state, embedder, mode, rng);
    let probs = params.probabilities(&embedder.embed(state).0, &embedder.embed(&future).0)?;
    Ok(ModelId(argmax(probs.as_slice().expect("contiguous"))))
}
