//! Cache-aware invocation billing in exact integer pico-USD.
//!
//! Consecutive turns on the same model bill the whole-block prefix of the
//! history at the cache-hit rate; a model switch re-bills everything at the
//! standard input rate.

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{read_to_string, Error, Result};

pub const PICO_PER_USD: i64 = 1_000_000_000_000;

/// Signed amount in pico-USD (1e-12 USD).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_pico(pico: i64) -> Self {
        Money(pico)
    }

    pub fn pico(self) -> i64 {
        self.0
    }

    pub fn to_usd(self) -> f64 {
        self.0 as f64 / PICO_PER_USD as f64
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.9}", self.to_usd())
    }
}

/// Per-token prices in pico-USD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PriceCard {
    pub input: i64,
    pub cached_input: i64,
    pub output: i64,
}

impl PriceCard {
    pub const FREE: PriceCard = PriceCard { input: 0, cached_input: 0, output: 0 };

    pub fn new(input: i64, cached_input: i64, output: i64) -> Result<Self> {
        if input < 0 || cached_input < 0 || output < 0 {
            return Err(Error::InvalidPrice("prices must be nonnegative".into()));
        }
        if cached_input > input {
            return Err(Error::InvalidPrice(format!("cached input price {cached_input} exceeds input price {input}")));
        }
        Ok(PriceCard { input, cached_input, output })
    }

    /// Builds a card from decimal USD-per-1M-token strings, e.g. `"0.0918"`.
    pub fn from_usd_per_million(input: &str, cached_input: &str, output: &str) -> Result<Self> {
        PriceCard::new(
            usd_per_million_to_pico(input)?,
            usd_per_million_to_pico(cached_input)?,
            usd_per_million_to_pico(output)?,
        )
    }
}

/// Reference cards for three hosted models (USD per 1M tokens:
/// input / cached input / output).
pub fn reference_cards() -> Vec<(&'static str, PriceCard)> {
    vec![
        ("qwen3-max", PriceCard { input: 459_000, cached_input: 91_800, output: 1_836_000 }),
        ("deepseek-chat-v3.2", PriceCard { input: 280_000, cached_input: 28_000, output: 420_000 }),
        ("gpt-5.1", PriceCard { input: 1_250_000, cached_input: 125_000, output: 10_000_000 }),
    ]
}

/// Converts a decimal USD-per-1M-tokens literal to pico-USD per token.
/// One pico-USD per token is 1e-6 USD per 1M tokens, so at most six
/// fractional digits convert exactly; anything finer is rejected.
pub fn usd_per_million_to_pico(literal: &str) -> Result<i64> {
    let bad = || Error::InvalidPrice(format!("`{literal}` is not a nonnegative decimal price"));
    let s = literal.trim();
    if s.starts_with('-') {
        return Err(bad());
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: String = format!("{int_part}{frac_part}");
    let digits = digits.trim_start_matches('0');
    let mut value: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
    // value * 10^(exponent - frac_len) USD per 1M; scale by 10^6 for pico per token.
    let mut shift = 6 + exponent - frac_part.len() as i32;
    while shift < 0 {
        if value % 10 != 0 {
            return Err(Error::InvalidPrice(format!(
                "`{literal}` has more than 6 decimal places of USD per 1M tokens"
            )));
        }
        value /= 10;
        shift += 1;
    }
    for _ in 0..shift {
        value = value.checked_mul(10).ok_or_else(bad)?;
    }
    i64::try_from(value).map_err(|_| bad())
}

/// B (cache block size in tokens) and λ (cost weight per USD).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub block_size: u64,
    pub lambda: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { block_size: 1024, lambda: 0.0 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::Config("cost.block_size must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("cost.lambda must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

fn tokens(n: u64) -> i64 {
    i64::try_from(n).expect("token count exceeds i64")
}

/// R^out = -c_out * L(y).
pub fn output_cost(price: &PriceCard, response_tokens: u64) -> Money {
    Money(-price.output * tokens(response_tokens))
}

/// R^in for one turn. With `same_model`, the `floor(L_hist / B) * B` prefix is a
/// cache hit and the remainder plus the new input is billed at the input rate.
pub fn input_cost(
    price: &PriceCard,
    history_tokens: u64,
    input_tokens: u64,
    same_model: bool,
    block_size: u64,
) -> Money {
    assert!(block_size >= 1, "block size must be >= 1");
    if same_model {
        let cached = (history_tokens / block_size) * block_size;
        let fresh = history_tokens % block_size + input_tokens;
        Money(-(price.input * tokens(fresh) + price.cached_input * tokens(cached)))
    } else {
        Money(-price.input * tokens(history_tokens + input_tokens))
    }
}

/// R^cost = R^in + R^out.
pub fn turn_cost(
    price: &PriceCard,
    history_tokens: u64,
    input_tokens: u64,
    response_tokens: u64,
    same_model: bool,
    block_size: u64,
) -> Money {
    input_cost(price, history_tokens, input_tokens, same_model, block_size) + output_cost(price, response_tokens)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PriceEntry<'a> {
    #[serde(borrow, rename = "in")]
    input: &'a RawValue,
    #[serde(borrow)]
    cache: &'a RawValue,
    #[serde(borrow)]
    out: &'a RawValue,
}

/// Parses `{model_id: {in, cache, out}}` (USD per 1M tokens) preserving file order.
pub fn parse_prices(text: &str) -> Result<IndexMap<String, PriceCard>> {
    let raw: IndexMap<String, PriceEntry<'_>> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|(name, e)| {
            let card = PriceCard::from_usd_per_million(e.input.get(), e.cache.get(), e.out.get())
                .map_err(|err| Error::InvalidPrice(format!("model `{name}`: {err}")))?;
            Ok((name, card))
        })
        .collect()
}

pub fn load_prices(path: &Path) -> Result<IndexMap<String, PriceCard>> {
    parse_prices(&read_to_string(path)?)
}
