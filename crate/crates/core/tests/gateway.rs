//! The gateway environment against scripted mock backends.

mod common;

use common::MockServer;
use seqroute::cost::PriceCard;
use seqroute::dialogue::{Checklist, ModelId, TaskSpec};
use seqroute::env::{Environment, Position};
use seqroute::eval::run_episode;
use seqroute::gateway::{GatewayConfig, GatewayEnv, END_MARKER};
use seqroute::router::FixedRouter;
use seqroute::{CostParams, RewardSpec};

fn task() -> TaskSpec {
    TaskSpec {
        task_id: "refund".into(),
        user_profile: "Wants a refund for a broken blender.".into(),
        checklist: Checklist::new(vec!["explains policy".into(), "gives timeline".into(), "explains return".into()])
            .unwrap(),
        initial_input: "My blender arrived broken today".into(),
        prior_knowledge: Some("Refunds take five business days.".into()),
        domain: Some("ecommerce".into()),
        initial_tokens: None,
    }
}

fn ok(texts: &[&str]) -> Vec<(u16, String)> {
    texts.iter().map(|t| (200, t.to_string())).collect()
}

#[test]
fn episode_follows_the_mock_transcript() {
    let idle = MockServer::start(Vec::new());
    let model = MockServer::start(ok(&["You can get a refund.", "It takes five days; ship it back with the label."]));
    let user = MockServer::start(ok(&["How long does it take?", END_MARKER]));
    let judge =
        MockServer::start(ok(&[r#"{"checklist": [1, 0, 0], "done": 0}"#, r#"{"checklist": [1, 1, 0.5], "done": 1}"#]));
    let config = GatewayConfig {
        candidates: vec![idle.profile(), model.profile()],
        user_simulator: user.profile(),
        judge: judge.profile(),
        concurrency: 2,
        max_turns: 8,
    };
    let env = GatewayEnv::new(&config, vec![task()]).unwrap();
    assert!(!env.is_deterministic());
    assert_eq!(env.num_actions(), 2);

    let card = PriceCard::new(1_000, 100, 2_000).unwrap();
    let billing = RewardSpec::combined(vec![card; 2], CostParams::default());
    let episode = run_episode(&FixedRouter(ModelId(1)), &env, "refund", 8, &billing, 1).unwrap();

    assert_eq!(episode.num_turns(), 2);
    assert_eq!(episode.final_score().unwrap().values(), [1.0, 1.0, 0.5]);
    assert_eq!(episode.total_quality().halves(), 5);
    assert_eq!(episode.success_rate, 2.5 / 3.0);
    // Turn 1: x_1 estimated at 5 words, 7 response tokens from usage.
    // Turn 2: 12 history tokens fresh (below one block), 7 user tokens.
    let expected = -(1_000 * 5 + 2_000 * 7) - (1_000 * (12 + 7) + 2_000 * 7);
    assert_eq!(episode.total_cost.pico(), expected);

    let candidate = model.finish();
    assert_eq!(candidate.len(), 2);
    let roles: Vec<&str> =
        candidate[1]["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["system", "user", "assistant", "user"]);
    assert_eq!(candidate[1]["messages"][3]["content"], "How long does it take?");

    let judged = judge.finish();
    let history = judged[1]["messages"][0]["content"].as_str().unwrap();
    assert!(history.contains("You can get a refund.") && history.contains("ship it back"));
    assert_eq!(user.finish().len(), 2);
    assert!(idle.finish().is_empty());
}

#[test]
fn horizon_ends_without_asking_the_user() {
    let model = MockServer::start(ok(&["Here is the policy."]));
    let user = MockServer::start(Vec::new());
    let judge = MockServer::start(ok(&[r#"{"checklist": [1, 0, 0], "done": 0}"#]));
    let config = GatewayConfig {
        candidates: vec![model.profile()],
        user_simulator: user.profile(),
        judge: judge.profile(),
        concurrency: 1,
        max_turns: 1,
    };
    let env = GatewayEnv::new(&config, vec![task()]).unwrap();
    let mut live = env.fork(0);
    let pos = Position::start(live.reset("refund").unwrap());
    let step = seqroute::env::transition(live.as_mut(), &pos, ModelId(0), &RewardSpec::quality(1)).unwrap();
    assert!(step.next.state.is_closed());
    assert!(user.finish().is_empty());
}

#[test]
fn misuse_and_failures_surface() {
    let model = MockServer::start(vec![(400, "bad request".into())]);
    let user = MockServer::start(Vec::new());
    let judge = MockServer::start(Vec::new());
    let config = GatewayConfig {
        candidates: vec![model.profile()],
        user_simulator: user.profile(),
        judge: judge.profile(),
        concurrency: 1,
        max_turns: 4,
    };
    let env = GatewayEnv::new(&config, vec![task()]).unwrap();
    let mut live = env.fork(0);
    assert!(live.reset("nope").is_err());
    let pos = Position::start(live.reset("refund").unwrap());
    assert!(live.step_user(&pos.state).is_err(), "user turn before a response");
    let err = live.step_response(&pos.state, ModelId(0)).unwrap_err();
    assert!(matches!(err, seqroute::Error::Transport { .. }), "{err}");
    assert_eq!(model.finish().len(), 1, "4xx is not retried");
    assert!(GatewayEnv::new(&GatewayConfig { candidates: vec![], ..config }, vec![task()]).is_err());
}
