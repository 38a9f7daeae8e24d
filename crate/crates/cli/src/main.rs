use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rand::Rng;

use seqroute::config::{EnvSource, RunConfig};
use seqroute::dialogue::load_tasks;
use seqroute::env::{load_env, Position};
use seqroute::eval::{
    evaluate, format_table, sweep_lambda, write_json, write_metrics_csv, write_selection_csv, write_sweep_csv,
};
use seqroute::gateway::GatewayEnv;
use seqroute::policy::{
    gradient_check, params_digest, read_params, train_from_records, write_params, Example, Fusion, PolicyParams,
    PolicyShape,
};
use seqroute::retrieval::DEFAULT_DIM;
use seqroute::reward::RewardKind;
use seqroute::router::{build_router, PolicyRouter, Router, RouterInputs, RouterKind};
use seqroute::search::{brute_force_oracle, generate_dataset, plan_action, read_records, write_records, Planner};
use seqroute::{seed, Environment, RewardSpec};

#[derive(Parser)]
#[command(name = "seqroute", version, about = "Long-horizon model routing for multi-turn dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a search dataset by replanning at every turn.
    Search {
        #[command(flatten)]
        common: Common,
        /// Planner that labels each turn.
        #[arg(long, default_value = "mcts", value_parser = parse_planner)]
        planner: Planner,
    },
    /// Train the routing policy on a search dataset by behavior cloning.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a router and print SR / AT / Cost.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a router across cost weights.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated λ values (default from config).
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Compare tree search with exhaustive enumeration on every task.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Horizon in turns (default: the environment's).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Compare analytic policy gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random parameter seeds.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Entries checked per parameter block (0 = all).
        #[arg(long, default_value_t = 64)]
        sample: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tabular environment file (instead of, or overriding, the config's).
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    router: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set search.simulations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_planner(s: &str) -> Result<Planner, String> {
    match s {
        "mcts" => Ok(Planner::Mcts),
        "greedy" => Ok(Planner::Greedy),
        _ => Err(format!("unknown planner `{s}` (expected mcts or greedy)")),
    }
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match (&self.config, &self.env) {
            (Some(path), _) => {
                let mut c = RunConfig::parse(
                    &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
                )?;
                c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
                c
            }
            (None, Some(env)) => RunConfig::tabular(env),
            (None, None) => bail!("pass --config <file> or --env <file>"),
        };
        if let Some(env) = &self.env {
            config.env = EnvSource::Tabular(env.clone());
        }
        if let Some(p) = &self.prices {
            config.prices = Some(p.clone());
        }
        if let Some(r) = &self.router {
            config.router = r.parse()?;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(p) = &self.dataset {
            config.dataset = Some(p.clone());
        }
        if let Some(p) = &self.params {
            config.params = Some(p.clone());
        }
        if let Some(p) = &self.output_dir {
            config.output_dir = p.clone();
        }
        for o in &self.overrides {
            let (key, value) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }
}

struct Setup {
    config: RunConfig,
    env: Box<dyn Environment>,
    tasks: Vec<String>,
    reward: RewardSpec,
}

impl Setup {
    fn new(config: RunConfig) -> Result<Self> {
        let mut config = config;
        let env: Box<dyn Environment> = match &config.env {
            EnvSource::Tabular(path) => Box::new(
                load_env(path)?.with_seed(seed::named_seed(config.seed, "env")).with_max_turns(config.search.max_turns),
            ),
            EnvSource::Gateway(g) => {
                let tasks = load_tasks(config.tasks.as_ref().expect("validated"))?;
                Box::new(GatewayEnv::new(g, tasks)?)
            }
        };
        config.search.max_turns = config.search.max_turns.min(env.max_turns());
        let reward = config.reward_spec(env.num_actions())?;
        let tasks = env.task_ids();
        Ok(Setup { config, env, tasks, reward })
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.config.output_dir)
            .with_context(|| format!("creating {}", self.config.output_dir.display()))?;
        Ok(self.config.output_dir.join(name))
    }

    fn dataset_path(&self) -> Result<PathBuf> {
        match &self.config.dataset {
            Some(p) => Ok(p.clone()),
            None => self.out("dataset.jsonl"),
        }
    }

    fn params_path(&self) -> Result<PathBuf> {
        match &self.config.params {
            Some(p) => Ok(p.clone()),
            None => self.out("params.json"),
        }
    }

    fn router(&self, kind: RouterKind, reward: &RewardSpec) -> Result<Box<dyn Router>> {
        let records = match kind {
            RouterKind::Knn(_) | RouterKind::Policy => Some(read_records(&self.dataset_path()?)?),
            _ => None,
        };
        let policy = match kind {
            RouterKind::Policy => Some(read_params(&self.params_path()?)?),
            _ => None,
        };
        let search = self.config.search_config();
        Ok(build_router(
            kind,
            self.env.as_ref(),
            RouterInputs { reward, search: &search, dataset: records.as_deref(), policy },
        )?)
    }
}

fn run_search(common: &Common, planner: Planner) -> Result<bool> {
    let setup = Setup::new(common.load()?)?;
    let records =
        generate_dataset(setup.env.as_ref(), &setup.tasks, &setup.config.search_config(), &setup.reward, planner)?;
    let path = setup.dataset_path()?;
    write_records(&path, &records)?;
    println!("wrote {} records for {} tasks to {}", records.len(), setup.tasks.len(), path.display());
    Ok(true)
}

fn run_train(common: &Common) -> Result<bool> {
    let setup = Setup::new(common.load()?)?;
    let records = read_records(&setup.dataset_path()?)?;
    let train = setup.config.train_config();
    let trained = train_from_records(&records, setup.env.num_actions(), &train)?;
    let path = setup.params_path()?;
    write_params(&path, &trained.params, train.retrieval)?;
    write_json(&setup.out("train_report.json")?, &trained.report)?;
    for (epoch, loss) in trained.report.losses.iter().enumerate() {
        println!("epoch {epoch:>3}  loss {loss:.6}");
    }
    println!("params {} sha256 {}", path.display(), params_digest(&trained.params, train.retrieval));
    Ok(true)
}

fn run_eval(common: &Common) -> Result<bool> {
    let setup = Setup::new(common.load()?)?;
    let router = setup.router(setup.config.router, &setup.reward)?;
    let seeds = if router.is_stochastic() || !setup.env.is_deterministic() {
        setup.config.eval_seeds.clone()
    } else {
        vec![setup.config.eval_seeds[0]]
    };
    let report = evaluate(
        router.as_ref(),
        setup.env.as_ref(),
        &setup.tasks,
        &seeds,
        setup.config.search.max_turns,
        &setup.reward,
    )?;
    write_json(&setup.out("report.json")?, &report)?;
    write_metrics_csv(&setup.out("metrics.csv")?, std::slice::from_ref(&report))?;
    write_selection_csv(&setup.out("selection.csv")?, &report.selection)?;
    print!("{}", format_table(std::slice::from_ref(&report)));
    Ok(true)
}

fn run_sweep(common: &Common, lambdas: Option<Vec<f64>>) -> Result<bool> {
    let setup = Setup::new(common.load()?)?;
    let lambdas = lambdas.unwrap_or_else(|| setup.config.lambdas.clone());
    let base = RewardSpec { kind: RewardKind::Combined, ..setup.reward.clone() };
    let kind = setup.config.router;
    let factory = |reward: &RewardSpec| -> seqroute::Result<Box<dyn Router>> {
        if kind != RouterKind::Policy {
            return setup.router(kind, reward).map_err(|e| seqroute::Error::Config(format!("{e:#}")));
        }
        // The policy imitates a planner that optimised this λ.
        let records =
            generate_dataset(setup.env.as_ref(), &setup.tasks, &setup.config.search_config(), reward, Planner::Mcts)?;
        let train = setup.config.train_config();
        let trained = train_from_records(&records, setup.env.num_actions(), &train)?;
        Ok(Box::new(PolicyRouter {
            params: trained.params.into(),
            index: trained.index.into(),
            embedder: Default::default(),
            mode: train.retrieval,
        }))
    };
    let seeds = if kind == RouterKind::Random || !setup.env.is_deterministic() {
        setup.config.eval_seeds.clone()
    } else {
        vec![setup.config.eval_seeds[0]]
    };
    let rows = sweep_lambda(
        &factory,
        setup.env.as_ref(),
        &setup.tasks,
        &lambdas,
        &seeds,
        setup.config.search.max_turns,
        &base,
    )?;
    write_sweep_csv(&setup.out("sweep.csv")?, &rows)?;
    println!("{:>8}  {:>7}  {:>5}  {:>12}  shares", "lambda", "SR(%)", "AT", "Cost($)");
    for r in &rows {
        let shares: Vec<String> = r.model_share.iter().map(|s| format!("{s:.2}")).collect();
        println!(
            "{:>8}  {:>7.2}  {:>5.2}  {:>12.6}  {}",
            r.lambda,
            100.0 * r.success_rate,
            r.average_turns,
            r.cost_usd.abs(),
            shares.join(" ")
        );
    }
    Ok(true)
}

fn run_oracle(common: &Common, horizon: Option<usize>) -> Result<bool> {
    let setup = Setup::new(common.load()?)?;
    let horizon = horizon.unwrap_or(setup.config.search.max_turns);
    let search = setup.config.search_config();
    let mut all = true;
    for task in &setup.tasks {
        let mut live = setup.env.fork(0);
        let start = Position::start(live.reset(task)?);
        let plan = brute_force_oracle(live.as_ref(), &start, horizon, search.discount, &setup.reward)?;
        let (action, q) = plan_action(live.as_ref(), &start, &search, &setup.reward)?;
        let agree = plan.actions.first() == Some(&action);
        all &= agree;
        let seq: Vec<String> = plan.actions.iter().map(|a| a.to_string()).collect();
        let q: Vec<String> = q.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "{task}: oracle [{}] value {:.6} | mcts {action} q [{}] | {}",
            seq.join(" "),
            plan.value,
            q.join(" "),
            if agree { "match" } else { "MISMATCH" }
        );
    }
    println!("{}", if all { "oracle and search agree on every task" } else { "oracle and search disagree" });
    Ok(all)
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn run_gradcheck(common: &Common, seeds: u64, sample: usize) -> Result<bool> {
    let config = match (&common.config, &common.env) {
        (None, None) if !common.overrides.is_empty() => bail!("--set needs --config or --env"),
        (None, None) => None,
        _ => Some(common.load()?),
    };
    let train = config.map(|c| c.train_config()).unwrap_or_default();
    let mut ok = true;
    println!("{:<8} {:<14} {:>8} {:>14}", "fusion", "block", "checked", "max rel error");
    for fusion in [Fusion::Gated, Fusion::Add, Fusion::Concat] {
        let shape = PolicyShape { input_dim: DEFAULT_DIM, hidden_dim: train.hidden_dim, actions: 3, fusion };
        let mut worst = vec![(0usize, 0.0f64); 8];
        let mut names = [""; 8];
        for s in 0..seeds {
            let run_seed = seed::child_seed(train.seed, s);
            let params = PolicyParams::init(shape, run_seed);
            let mut rng = seed::rng(seed::named_seed(run_seed, "batch"));
            let batch: Vec<Example> = (0..8)
                .map(|i| Example {
                    state: Array1::from_iter((0..DEFAULT_DIM).map(|_| rng.random_range(-0.2..0.2))),
                    future: Array1::from_iter((0..DEFAULT_DIM).map(|_| rng.random_range(-0.2..0.2))),
                    action: i % 3,
                })
                .collect();
            let sample = if sample == 0 { None } else { Some(sample) };
            for (i, check) in gradient_check(&params, &batch, sample, run_seed)?.into_iter().enumerate() {
                names[i] = check.block;
                worst[i].0 += check.checked;
                worst[i].1 = worst[i].1.max(check.max_rel_error);
            }
        }
        for (name, (checked, err)) in names.iter().zip(&worst) {
            if *checked == 0 {
                continue;
            }
            ok &= *err < GRADCHECK_TOLERANCE;
            println!("{:<8} {:<14} {:>8} {:>14.3e}", format!("{fusion:?}").to_lowercase(), name, checked, err);
        }
    }
    println!("{}", if ok { "gradient check passed" } else { "gradient check FAILED" });
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Search { common, planner } => run_search(common, *planner),
        Command::Train { common } => run_train(common),
        Command::Eval { common } => run_eval(common),
        Command::Sweep { common, lambdas } => run_sweep(common, lambdas.clone()),
        Command::Oracle { common, horizon } => run_oracle(common, *horizon),
        Command::Gradcheck { common, seeds, sample } => run_gradcheck(common, *seeds, *sample),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
