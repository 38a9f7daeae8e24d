//! Property tests over the value types, billing, retrieval and the policy.

use proptest::prelude::*;

use seqroute::baselines::{knn_route, KnnEntry, KnnHistory};
use seqroute::cost::{input_cost, reference_cards, usd_per_million_to_pico, Money, PriceCard};
use seqroute::dialogue::{ChecklistScore, DialogueState, Exchange, ModelId, NextInput, Points};
use seqroute::policy::{route_policy, Fusion, PolicyParams, PolicyShape};
use seqroute::retrieval::{cosine, Embedder, Embedding, HashingEmbedder, RetrievalIndex, RetrievalMode};
use seqroute::reward::{combined_reward, quality_reward};
use seqroute::seed;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

fn half_points(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0]), n)
}

fn fusion() -> impl Strategy<Value = Fusion> {
    prop::sample::select(vec![Fusion::Gated, Fusion::Add, Fusion::Concat])
}

const D: usize = 16;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn policy_outputs_are_a_distribution(f in fusion(), seed in any::<u64>(), s in vector(D), t in vector(D), scale in 0.1f64..20.0) {
        let mut p = PolicyParams::init(PolicyShape { input_dim: D, hidden_dim: 8, actions: 4, fusion: f }, seed);
        p.wc *= scale;
        let probs = p.probabilities(&s, &t).unwrap();
        prop_assert!((probs.sum() - 1.0).abs() < 1e-9);
        prop_assert!(probs.iter().all(|&x| x > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shifting_all_logits_keeps_the_route(f in fusion(), seed in any::<u64>(), shift in -50.0f64..50.0, words in "[a-z ]{1,40}") {
        let embedder = HashingEmbedder::new(D);
        let index = RetrievalIndex::from_entries(D, Vec::new()).unwrap();
        let p = PolicyParams::init(PolicyShape { input_dim: D, hidden_dim: 8, actions: 3, fusion: f }, seed);
        let mut q = p.clone();
        q.bc += shift;
        let mut rng = seed::rng(0);
        let state = format!("U: {words}\n");
        prop_assert_eq!(
            route_policy(&p, &index, &embedder, &state, RetrievalMode::Semantic, &mut rng).unwrap(),
            route_policy(&q, &index, &embedder, &state, RetrievalMode::Semantic, &mut rng).unwrap()
        );
    }

    #[test]
    fn gated_and_add_coincide_when_future_equals_state(seed in any::<u64>(), s in vector(D)) {
        let gated = PolicyParams::init(PolicyShape { input_dim: D, hidden_dim: 8, actions: 3, fusion: Fusion::Gated }, seed);
        let add = PolicyParams { shape: PolicyShape { fusion: Fusion::Add, ..gated.shape }, wg: Default::default(), bg: Default::default(), ..gated.clone() };
        prop_assert_eq!(gated.probabilities(&s, &s).unwrap(), add.probabilities(&s, &s).unwrap());
    }

    #[test]
    fn success_rate_is_total_over_n(values in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0]), 1..12)) {
        let score = ChecklistScore::new(&values).unwrap();
        prop_assert_eq!(score.success_rate().unwrap(), score.total().to_f64() / values.len() as f64);
    }

    #[test]
    fn quality_rewards_telescope(n in 1usize..8, snapshots in prop::collection::vec(half_points(8), 1..10)) {
        let scores: Vec<ChecklistScore> = snapshots.iter().map(|v| ChecklistScore::new(&v[..n]).unwrap()).collect();
        let mut previous = Points::ZERO;
        let mut sum = Points::ZERO;
        for s in &scores {
            sum = sum + quality_reward(s.total(), previous);
            previous = s.total();
        }
        prop_assert_eq!(sum, scores.last().unwrap().total());
    }

    #[test]
    fn off_grid_scores_are_rejected(x in -2.0f64..3.0) {
        let on_grid = [0.0, 0.5, 1.0].contains(&x);
        prop_assert_eq!(ChecklistScore::new(&[x]).is_ok(), on_grid);
    }

    #[test]
    fn zero_lambda_is_pure_quality(halves in -20i64..20, pico in -10_000_000_000i64..0) {
        let q = Points::from_halves(halves);
        prop_assert_eq!(combined_reward(q, Money::from_pico(pico), 0.0), q.to_f64());
    }

    #[test]
    fn money_sums_are_order_free(mut amounts in prop::collection::vec(-1_000_000_000_000i64..0, 0..50), rot in 0usize..50) {
        let forward: Money = amounts.iter().map(|&a| Money::from_pico(a)).sum();
        if !amounts.is_empty() {
            let k = rot % amounts.len();
            amounts.rotate_left(k);
            amounts.reverse();
        }
        let shuffled: Money = amounts.iter().map(|&a| Money::from_pico(a)).sum();
        prop_assert_eq!(forward, shuffled);
    }

    #[test]
    fn cache_blocks_partition_history(hist in 0u64..1_000_000, block in 1u64..10_000, x in 0u64..5_000) {
        prop_assert_eq!(hist % block + (hist / block) * block, hist);
        // With the cache rate equal to the input rate, staying and switching cost the same.
        let flat = PriceCard::new(700, 700, 1).unwrap();
        prop_assert_eq!(input_cost(&flat, hist, x, true, block), input_cost(&flat, hist, x, false, block));
        // Below one block nothing is cached.
        for (_, card) in reference_cards() {
            if hist < block {
                prop_assert_eq!(input_cost(&card, hist, x, true, block), input_cost(&card, hist, x, false, block));
            }
        }
    }

    #[test]
    fn price_literals_convert_exactly(micro in 0i64..100_000_000_000) {
        let literal = format!("{}.{:06}", micro / 1_000_000, micro % 1_000_000);
        prop_assert_eq!(usd_per_million_to_pico(&literal).unwrap(), micro);
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(a in vector(8), b in vector(8)) {
        let c = cosine(&a, &b);
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
        prop_assert_eq!(c, cosine(&b, &a));
    }

    #[test]
    fn embeddings_are_unit_or_zero(text in "\\PC{0,60}") {
        let norm = HashingEmbedder::default().embed(&text).norm();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn future_state_is_total(text in "\\PC{0,60}") {
        let index = RetrievalIndex::from_entries(HashingEmbedder::default().dim(), Vec::new()).unwrap();
        prop_assert_eq!(index.future_state(&text, &HashingEmbedder::default()), text);
    }

    #[test]
    fn knn_exact_match_returns_its_argmax(rows in prop::collection::vec((vector(6), vector(3)), 1..20), pick in any::<prop::sample::Index>()) {
        // Skip zero vectors, which have no direction to match.
        prop_assume!(rows.iter().all(|(e, _)| e.iter().any(|x| x.abs() > 1e-3)));
        let entries: Vec<KnnEntry> = rows.iter().map(|(e, r)| KnnEntry { embedding: Embedding(e.clone()), rewards: r.clone() }).collect();
        let i = pick.index(entries.len());
        // Parallel duplicates would tie with the pick; require a unique best match.
        prop_assume!(entries.iter().enumerate().all(|(j, e)| j == i || cosine(&e.embedding.0, &entries[i].embedding.0) < 1.0 - 1e-9));
        let expected = seqroute::search::argmax(&entries[i].rewards);
        let query = entries[i].embedding.clone();
        let history = KnnHistory::new(3, entries).unwrap();
        prop_assert_eq!(knn_route(&history, &query, 1).unwrap(), ModelId(expected));
    }

    #[test]
    fn append_exchange_is_pure(text in "[a-z ]{1,20}", tokens in 0u64..500, model in 0usize..3, end in any::<bool>()) {
        let state = DialogueState::new("t", "hello there", 2);
        let before = state.clone();
        let next = if end { NextInput::Terminal } else { NextInput::Input { text: text.clone(), tokens } };
        let exchange = Exchange { response: text.clone(), response_tokens: tokens, model_id: ModelId(model) };
        let out = state.append_exchange(exchange, next, 3).unwrap();
        prop_assert_eq!(&state, &before);
        prop_assert_eq!(out.turn_index(), 2);
        prop_assert_eq!(out.history_tokens(), 2 + tokens);
        prop_assert_eq!(out.is_closed(), end);
    }
}
