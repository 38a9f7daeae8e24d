//! Per-turn rewards: checklist increments, optionally traded against cost.

use serde::{Deserialize, Serialize};

use crate::cost::{turn_cost, CostParams, Money, PriceCard};
use crate::dialogue::{DialogueState, ModelId, Points};
use crate::error::{Error, Result};

/// R_t - R_{t-1}, with R_0 = 0.
pub fn quality_reward(current: Points, previous: Points) -> Points {
    current - previous
}

/// R_t - R_{t-1} + λ · R^cost, cost in USD.
pub fn combined_reward(quality: Points, cost: Money, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return quality.to_f64();
    }
    quality.to_f64() + lambda * cost.to_usd()
}

/// Quality gained per USD spent: (R_t - R_{t-1}) / |R^cost|.
pub fn ratio_reward(quality: Points, cost: Money) -> Result<f64> {
    if cost == Money::ZERO {
        return Err(Error::ZeroCost);
    }
    Ok(quality.to_f64() / cost.to_usd().abs())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Checklist increment only.
    #[default]
    Quality,
    /// Increment plus λ-weighted cost.
    Combined,
    /// Increment per USD.
    Ratio,
}

/// Reward breakdown for one turn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnReward {
    pub quality: Points,
    pub cost: Money,
    pub value: f64,
}

/// Everything needed to score a turn: reward shape, cache parameters and the
/// price card of every action.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub cost: CostParams,
    pub prices: Vec<PriceCard>,
}

impl RewardSpec {
    /// Quality-only reward over `n` free actions.
    pub fn quality(n: usize) -> Self {
        RewardSpec { kind: RewardKind::Quality, cost: CostParams::default(), prices: vec![PriceCard::FREE; n] }
    }

    pub fn combined(prices: Vec<PriceCard>, cost: CostParams) -> Self {
        RewardSpec { kind: RewardKind::Combined, cost, prices }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.cost.lambda = lambda;
        out
    }

    /// Bill and score answering `before.pending_input` with `action`, given the
    /// judged cumulative score `now` and the previous total.
    pub fn evaluate(
        &self,
        before: &DialogueState,
        action: ModelId,
        response_tokens: u64,
        previous: Points,
        now: Points,
    ) -> Result<TurnReward> {
        let price = self.prices.get(action.0).ok_or(Error::InvalidModel { id: action.0, len: self.prices.len() })?;
        let same_model = before.last_model() == Some(action);
        let cost = turn_cost(
            price,
            before.history_tokens(),
            before.pending_tokens,
            response_tokens,
            same_model,
            self.cost.block_size,
        );
        let quality = quality_reward(now, previous);
        let value = match self.kind {
            RewardKind::Quality => quality.to_f64(),
            RewardKind::Combined => combined_reward(quality, cost, self.cost.lambda),
            RewardKind::Ratio => ratio_reward(quality, cost)?,
        };
        Ok(TurnReward { quality, cost, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{reference_cards, PICO_PER_USD};

    fn usd(x: f64) -> Money {
        Money::from_pico((x * PICO_PER_USD as f64).round() as i64)
    }

    #[test]
    fn quality_vectors() {
        let p = Points::from_halves;
        assert_eq!(quality_reward(p(5), p(3)).to_f64(), 1.0);
        assert_eq!(quality_reward(p(4), p(4)), Points::ZERO);
        assert_eq!(quality_reward(p(2), p(3)).to_f64(), -0.5);
    }

    #[test]
    fn combined_vectors() {
        let one = Points::from_halves(2);
        assert!((combined_reward(one, usd(-0.0002), 50.0) - 0.99).abs() < 1e-12);
        assert_eq!(combined_reward(one, usd(-0.0002), 0.0), 1.0);
        assert!((combined_reward(Points::ZERO, usd(-0.001), 50.0) + 0.05).abs() < 1e-12);
    }

    #[test]
    fn ratio_vectors() {
        let one = Points::from_halves(2);
        assert!((ratio_reward(one, usd(-0.0002)).unwrap() - 5000.0).abs() < 1e-6);
        assert_eq!(ratio_reward(Points::ZERO, usd(-0.3)).unwrap(), 0.0);
        assert!(matches!(ratio_reward(one, Money::ZERO), Err(Error::ZeroCost)));
    }

    #[test]
    fn evaluate_uses_cache_on_repeat() {
        let prices: Vec<PriceCard> = reference_cards().into_iter().map(|(_, c)| c).collect();
        let spec = RewardSpec::combined(prices, CostParams { block_size: 1024, lambda: 50.0 });
        let mut s = DialogueState::new("t", "x", 100);
        s.history.push(crate::dialogue::Turn {
            user_input: "a".into(),
            user_tokens: 1000,
            response: "b".into(),
            response_tokens: 1048,
            model_id: ModelId(1),
        });
        let stay = spec.evaluate(&s, ModelId(1), 0, Points::ZERO, Points::ZERO).unwrap();
        let switch = spec.evaluate(&s, ModelId(0), 0, Points::ZERO, Points::ZERO).unwrap();
        assert_eq!(stay.cost.pico(), -85_344_000);
        assert!(stay.value > switch.value);
        assert!(spec.evaluate(&s, ModelId(3), 0, Points::ZERO, Points::ZERO).is_err());
    }
}
