//! Episodes and metrics: success rate (mean final checklist completion),
//! average turns and total invocation cost, plus λ sweeps and report files.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::Money;
use crate::dialogue::{ChecklistScore, Points};
use crate::env::{transition, Environment, Position};
use crate::error::{Error, Result};
use crate::reward::RewardSpec;
use crate::router::Router;
use crate::seed;

/// Seeds used when a stochastic router or environment is evaluated.
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnLog {
    pub turn: usize,
    pub action: usize,
    pub quality_reward: Points,
    pub cost: Money,
    pub reward: f64,
    pub score: ChecklistScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub seed: u64,
    pub turns: Vec<TurnLog>,
    /// Mean final checklist value; 0 when no turn completed.
    pub success_rate: f64,
    pub total_cost: Money,
}

impl EpisodeResult {
    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    pub fn final_score(&self) -> Option<&ChecklistScore> {
        self.turns.last().map(|t| &t.score)
    }

    /// Σ_t (R_t − R_{t−1}).
    pub fn total_quality(&self) -> Points {
        self.turns.iter().map(|t| t.quality_reward).sum()
    }

    pub fn checklist_len(&self) -> Option<usize> {
        self.final_score().map(ChecklistScore::len)
    }
}

/// Plays one task: route, respond, bill, user reply, until the dialogue ends
/// or `max_turns` turns have been played. The environment handle is a fork of
/// `env` on stream `seed`; the router draws from a substream of `seed`.
pub fn run_episode(
    router: &dyn Router,
    env: &dyn Environment,
    task_id: &str,
    max_turns: usize,
    billing: &RewardSpec,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut live = env.fork(seed);
    let mut rng = seed::rng(seed::named_seed(seed, "random-router"));
    let mut result = EpisodeResult {
        task_id: task_id.to_string(),
        seed,
        turns: Vec::new(),
        success_rate: 0.0,
        total_cost: Money::ZERO,
    };
    let mut pos = Position::start(live.reset(task_id)?);
    while !pos.is_terminal(max_turns) {
        let step = router
            .route(live.as_ref(), &pos, &mut rng)
            .and_then(|action| Ok((action, transition(live.as_mut(), &pos, action, billing)?)));
        let (action, step) = match step {
            Ok(s) => s,
            Err(source) => {
                return Err(Error::Episode {
                    task_id: task_id.to_string(),
                    turns: result.turns.len(),
                    partial: Box::new(result),
                    source: Box::new(source),
                })
            }
        };
        let score = step.outcome.score.clone();
        result.total_cost += step.reward.cost;
        result.success_rate = score.success_rate()?;
        result.turns.push(TurnLog {
            turn: pos.state.turn_index(),
            action: action.0,
            quality_reward: step.reward.quality,
            cost: step.reward.cost,
            reward: step.reward.value,
            score,
        });
        pos = step.next;
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub success_rate: f64,
    pub average_turns: f64,
    pub cost: Money,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub router: String,
    /// Mean over every (task, seed) episode.
    pub success_rate: f64,
    pub average_turns: f64,
    /// Exact sum over every episode.
    pub total_cost: Money,
    /// Total cost divided by the number of seeds: the price of one pass over
    /// the task set.
    pub cost_per_run_usd: f64,
    pub per_seed: Vec<SeedMetrics>,
    /// `selection[t][a]`: share of episodes that reached turn t+1 and chose a.
    pub selection: Vec<Vec<f64>>,
    pub episodes: Vec<EpisodeResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-turn action shares over a set of episodes.
pub fn selection_distribution(episodes: &[EpisodeResult], actions: usize) -> Vec<Vec<f64>> {
    let horizon = episodes.iter().map(EpisodeResult::num_turns).max().unwrap_or(0);
    (0..horizon)
        .map(|t| {
            let mut counts = vec![0usize; actions];
            let mut reached = 0;
            for e in episodes {
                if let Some(turn) = e.turns.get(t) {
                    counts[turn.action] += 1;
                    reached += 1;
                }
            }
            counts.iter().map(|&c| c as f64 / reached as f64).collect()
        })
        .collect()
}

/// Runs every (seed, task) pair in parallel and aggregates.
pub fn evaluate(
    router: &dyn Router,
    env: &dyn Environment,
    tasks: &[String],
    seeds: &[u64],
    max_turns: usize,
    billing: &RewardSpec,
) -> Result<MetricsReport> {
    if tasks.is_empty() {
        return Err(Error::Config("evaluation needs at least one task".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one seed".into()));
    }
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..tasks.len()).map(move |t| (s, t))).collect();
    let episodes: Vec<EpisodeResult> = jobs
        .par_iter()
        .map(|&(s, t)| run_episode(router, env, &tasks[t], max_turns, billing, seed::child_seed(s, t as u64)))
        .collect::<Result<_>>()?;
    let per_seed = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let chunk = &episodes[i * tasks.len()..(i + 1) * tasks.len()];
            SeedMetrics {
                seed: s,
                success_rate: mean(chunk.iter().map(|e| e.success_rate)),
                average_turns: mean(chunk.iter().map(|e| e.num_turns() as f64)),
                cost: chunk.iter().map(|e| e.total_cost).sum(),
            }
        })
        .collect();
    let total_cost: Money = episodes.iter().map(|e| e.total_cost).sum();
    Ok(MetricsReport {
        router: router.name(),
        success_rate: mean(episodes.iter().map(|e| e.success_rate)),
        average_turns: mean(episodes.iter().map(|e| e.num_turns() as f64)),
        total_cost,
        cost_per_run_usd: total_cost.to_usd() / seeds.len() as f64,
        per_seed,
        selection: selection_distribution(&episodes, env.num_actions()),
        episodes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub success_rate: f64,
    pub average_turns: f64,
    pub cost_usd: f64,
    /// Share of all turns routed to each model.
    pub model_share: Vec<f64>,
}

/// Evaluates a router built for each λ. `base` supplies prices and block size;
/// the factory receives `base` with λ substituted and builds a router that
/// plans or was trained under that reward.
pub fn sweep_lambda(
    factory: &(dyn Fn(&RewardSpec) -> Result<Box<dyn Router>> + Sync),
    env: &dyn Environment,
    tasks: &[String],
    lambdas: &[f64],
    seeds: &[u64],
    max_turns: usize,
    base: &RewardSpec,
) -> Result<Vec<SweepRow>> {
    lambdas
        .iter()
        .map(|&lambda| {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::Config(format!("λ must be a finite value >= 0, got {lambda}")));
            }
            let reward = base.with_lambda(lambda);
            let router = factory(&reward)?;
            let report = evaluate(router.as_ref(), env, tasks, seeds, max_turns, &reward)?;
            let mut counts = vec![0usize; env.num_actions()];
            let mut total = 0;
            for e in &report.episodes {
                for t in &e.turns {
                    counts[t.action] += 1;
                    total += 1;
                }
            }
            Ok(SweepRow {
                lambda,
                success_rate: report.success_rate,
                average_turns: report.average_turns,
                cost_usd: report.cost_per_run_usd,
                model_share: counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect(),
            })
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

/// One row per report: router, SR, AT, cost per run.
pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["router", "success_rate", "average_turns", "cost_usd"])?;
    for r in reports {
        w.write_record([
            r.router.clone(),
            r.success_rate.to_string(),
            r.average_turns.to_string(),
            r.cost_per_run_usd.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format: turn, model, share.
pub fn write_selection_csv(path: &Path, selection: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["turn", "model", "share"])?;
    for (t, shares) in selection.iter().enumerate() {
        for (a, s) in shares.iter().enumerate() {
            w.write_record([(t + 1).to_string(), a.to_string(), s.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let actions = rows.first().map_or(0, |r| r.model_share.len());
    let mut header = vec!["lambda".to_string(), "success_rate".into(), "average_turns".into(), "cost_usd".into()];
    header.extend((0..actions).map(|a| format!("share_{a}")));
    w.write_record(&header)?;
    for r in rows {
        let mut row =
            vec![r.lambda.to_string(), r.success_rate.to_string(), r.average_turns.to_string(), r.cost_usd.to_string()];
        row.extend(r.model_share.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Fixed-width comparison table with SR as a percentage.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.router.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>7}  {:>5}  {:>12}\n", "router", "SR(%)", "AT", "Cost($)");
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>7.2}  {:>5.2}  {:>12.6}\n",
            r.router,
            100.0 * r.success_rate,
            r.average_turns,
            r.cost_per_run_usd.abs()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(task: &str, sr: f64, actions: &[usize], cost: i64) -> EpisodeResult {
        EpisodeResult {
            task_id: task.into(),
            seed: 0,
            turns: actions
                .iter()
                .enumerate()
                .map(|(i, &a)| TurnLog {
                    turn: i + 1,
                    action: a,
                    quality_reward: Points::ZERO,
                    cost: Money::from_pico(cost),
                    reward: 0.0,
                    score: ChecklistScore::zeros(1),
                })
                .collect(),
            success_rate: sr,
            total_cost: Money::from_pico(cost * actions.len() as i64),
        }
    }

    #[test]
    fn selection_shares() {
        let eps = [episode("a", 0.5, &[0, 1], -1), episode("b", 1.0, &[1], -1)];
        assert_eq!(selection_distribution(&eps, 2), vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(mean(eps.iter().map(|e| e.success_rate)), 0.75);
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![SweepRow {
            lambda: 5.0,
            success_rate: 0.5,
            average_turns: 2.0,
            cost_usd: -0.25,
            model_share: vec![1.0, 0.0],
        }];
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "lambda,success_rate,average_turns,cost_usd,share_0,share_1\n5,0.5,2,-0.25,1,0\n");
        let path = dir.path().join("sel.csv");
        write_selection_csv(&path, &[vec![0.25, 0.75]]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "turn,model,share\n1,0,0.25\n1,1,0.75\n");
    }
}
