//! The run configuration: one JSON document naming the environment, prices,
//! search/training/cost settings, router and output directory. Unknown keys
//! are rejected. Relative paths resolve against the config file's directory.
//!
//! ```json
//! {"env": {"tabular": "fixtures/trap.json"},
//!  "prices": "fixtures/prices.json",
//!  "search": {"simulations": 100},
//!  "router": "mcts", "seed": 7, "output_dir": "out"}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cost::{load_prices, CostParams, PriceCard};
use crate::error::{read_to_string, Error, Result};
use crate::eval::DEFAULT_SEEDS;
use crate::gateway::GatewayConfig;
use crate::policy::TrainConfig;
use crate::reward::{RewardKind, RewardSpec};
use crate::router::RouterKind;
use crate::search::SearchConfig;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSource {
    Tabular(PathBuf),
    Gateway(Box<GatewayConfig>),
}

fn default_router() -> RouterKind {
    RouterKind::Mcts
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 5.0, 50.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSource,
    /// `{model: {in, cache, out}}` in USD per 1M tokens, one entry per action
    /// in action order. Without it every model is free.
    #[serde(default)]
    pub prices: Option<PathBuf>,
    /// Task file; required by the gateway environment.
    #[serde(default)]
    pub tasks: Option<PathBuf>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub reward: RewardKind,
    #[serde(default = "default_router")]
    pub router: RouterKind,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Every random stream derives from this seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub eval_seeds: Vec<u64>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Search dataset to read (train, knn) or write (search).
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Policy parameters to read (eval) or write (train).
    #[serde(default)]
    pub params: Option<PathBuf>,
}

impl RunConfig {
    /// Minimal config around a tabular environment file.
    pub fn tabular(env: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({"env": {"tabular": env.into()}})).expect("defaults deserialize")
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = RunConfig::parse(&read_to_string(path)?)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let EnvSource::Tabular(p) = &mut self.env {
            fix(p);
        }
        for p in [&mut self.prices, &mut self.tasks, &mut self.dataset, &mut self.params].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Sets a dotted key, e.g. `search.simulations=500`. The value is parsed
    /// as JSON, falling back to a plain string; the key must already exist.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.train.validate()?;
        self.cost.validate()?;
        if self.search.seed != 0 || self.train.seed != 0 {
            return Err(Error::Config(
                "search.seed / train.seed are derived from the top-level `seed`; set that instead".into(),
            ));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("eval_seeds must not be empty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambdas: {l} is not a finite value >= 0")));
        }
        let must_exist = |field: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{field}: `{}` does not exist", p.display())))
            }
        };
        match &self.env {
            EnvSource::Tabular(p) => must_exist("env.tabular", p)?,
            EnvSource::Gateway(g) => {
                for b in g.candidates.iter().chain([&g.user_simulator, &g.judge]) {
                    b.validate()?;
                }
                if self.tasks.is_none() {
                    return Err(Error::Config("tasks: required with a gateway environment".into()));
                }
            }
        }
        if let Some(p) = &self.prices {
            must_exist("prices", p)?;
        }
        if let Some(p) = &self.tasks {
            must_exist("tasks", p)?;
        }
        Ok(())
    }

    /// Search settings with the seed taken from the `search` substream.
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig { seed: seed::named_seed(self.seed, "search"), ..self.search.clone() }
    }

    /// Training settings with the seed taken from the `train` substream.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: seed::named_seed(self.seed, "train"), ..self.train.clone() }
    }

    /// Price cards for `actions` models, from the price file or all free.
    pub fn price_cards(&self, actions: usize) -> Result<Vec<PriceCard>> {
        let Some(path) = &self.prices else {
            return Ok(vec![PriceCard::FREE; actions]);
        };
        let cards = load_prices(path)?;
        if cards.len() != actions {
            return Err(Error::Config(format!(
                "prices: `{}` lists {} models but the environment has {actions} actions",
                path.display(),
                cards.len()
            )));
        }
        Ok(cards.into_values().collect())
    }

    pub fn reward_spec(&self, actions: usize) -> Result<RewardSpec> {
        Ok(RewardSpec { kind: self.reward, cost: self.cost, prices: self.price_cards(actions)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = RunConfig::parse(r#"{"env": {"tabular": "x.json"}, "search": {"simulations": 50}}"#).unwrap();
        assert_eq!(c.search.simulations, 50);
        assert_eq!(c.router, RouterKind::Mcts);
        c.set("search.simulations", "500").unwrap();
        c.set("router", "fixed:1").unwrap();
        c.set("cost.lambda", "5").unwrap();
        c.set("train.fusion", "concat").unwrap();
        assert_eq!(c.search.simulations, 500);
        assert_eq!(c.router, RouterKind::Fixed(1));
        assert_eq!(c.cost.lambda, 5.0);
        assert!(c.set("search.simulation", "5").is_err());
        let err = c.set("router", "oracle").unwrap_err().to_string();
        assert!(err.contains("router"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse(r#"{"env": {"tabular": "x"}, "serach": {}}"#).unwrap_err().to_string();
        assert!(err.contains("serach"), "{err}");
        assert!(RunConfig::parse(r#"{"env": {"tabular": "x"}, "search": {"k": 1}}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let c = RunConfig::tabular("/definitely/missing.json");
        assert!(c.validate().unwrap_err().to_string().contains("env.tabular"));
        let mut c = RunConfig::tabular(file!());
        c.resolve_paths(Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().parent().unwrap());
        c.validate().unwrap();
        c.search.seed = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn substreams_differ() {
        let c = RunConfig::tabular("x");
        assert_ne!(c.search_config().seed, c.train_config().seed);
    }
}
