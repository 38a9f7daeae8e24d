use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};

use seqroute::env::{random_tree, Environment, Position, RandomTreeSpec, TabularEnv};
use seqroute::policy::{PolicyParams, PolicyShape};
use seqroute::retrieval::{Embedder, HashingEmbedder, IndexEntry, RetrievalIndex, DEFAULT_DIM};
use seqroute::search::{plan_action, SearchConfig};
use seqroute::{seed, RewardSpec};

const TEXT: &str = "U: my order arrived with a cracked screen and I would like a refund or a replacement \
                    A: I am sorry to hear that, could you share the order number";

fn embed(c: &mut Criterion) {
    let e = HashingEmbedder::default();
    c.bench_function("embed", |b| b.iter(|| e.embed(black_box(TEXT))));
}

fn nearest(c: &mut Criterion) {
    let e = HashingEmbedder::default();
    let entries = (0..1000)
        .map(|i| IndexEntry {
            id: format!("r{i}"),
            embedding: e.embed(&format!("{TEXT} case {i} variant {}", i * 7)),
            state: String::new(),
            successor: Some(format!("next {i}")),
        })
        .collect();
    let index = RetrievalIndex::from_entries(DEFAULT_DIM, entries).unwrap();
    let query = e.embed("cracked screen refund");
    c.bench_function("nearest_1000", |b| b.iter(|| index.nearest(black_box(&query)).unwrap()));
}

fn plan(c: &mut Criterion) {
    let spec = RandomTreeSpec { actions: 3, depth: 5, ..RandomTreeSpec::default() };
    let mut env = TabularEnv::new(Arc::new(random_tree(11, &spec)), 0);
    let task = env.task_ids()[0].clone();
    let root = Position::start(env.reset(&task).unwrap());
    let config = SearchConfig { simulations: 200, seed: 1, ..SearchConfig::default() };
    let reward = RewardSpec::quality(3);
    c.bench_function("plan_action_200", |b| b.iter(|| plan_action(&env, black_box(&root), &config, &reward).unwrap()));
}

fn forward(c: &mut Criterion) {
    let shape = PolicyShape { input_dim: DEFAULT_DIM, hidden_dim: 64, actions: 3, fusion: Default::default() };
    let params = PolicyParams::init(shape, 3);
    let mut rng = seed::rng(5);
    let mut draw = || -> Vec<f64> { (0..DEFAULT_DIM).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect() };
    let (s, f) = (draw(), draw());
    c.bench_function("policy_forward", |b| b.iter(|| params.probabilities(black_box(&s), black_box(&f)).unwrap()));
}

criterion_group!(benches, embed, nearest, plan, forward);
criterion_main!(benches);
