use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{greedy_route, plan_action, SearchConfig};
use crate::env::{transition, Environment, Position};
use crate::error::{Error, Result};
use crate::reward::RewardSpec;
use crate::seed;

/// One (state, expert action) row of the search dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRecord {
    pub id: String,
    pub task_id: String,
    pub turn: usize,
    /// Canonical render of the state the action was chosen in.
    pub state: String,
    pub action: usize,
    /// Root Q vector; empty for greedy-planned records.
    pub q: Vec<f64>,
    pub quality_reward: f64,
    pub cost_picousd: i64,
    pub next_id: Option<String>,
}

impl SearchRecord {
    pub fn record_id(task_id: &str, turn: usize) -> String {
        format!("{task_id}#{turn}")
    }
}

/// Who picks the recorded action at each turn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    #[default]
    Mcts,
    Greedy,
}

fn run_task(
    env: &dyn Environment,
    task_id: &str,
    task_seed: u64,
    config: &SearchConfig,
    reward: &RewardSpec,
    planner: Planner,
) -> Result<Vec<SearchRecord>> {
    let mut live = env.fork(task_seed);
    let mut pos = Position::start(live.reset(task_id)?);
    let mut records: Vec<SearchRecord> = Vec::new();
    while !pos.is_terminal(config.max_turns) {
        let turn = pos.state.turn_index();
        let (action, q) = match planner {
            Planner::Mcts => {
                let cfg = SearchConfig { seed: seed::child_seed(task_seed, turn as u64), ..config.clone() };
                plan_action(live.as_ref(), &pos, &cfg, reward)?
            }
            Planner::Greedy => (greedy_route(live.as_ref(), &pos, reward)?, Vec::new()),
        };
        let step = transition(live.as_mut(), &pos, action, reward)?;
        let id = SearchRecord::record_id(task_id, turn);
        if let Some(prev) = records.last_mut() {
            prev.next_id = Some(id.clone());
        }
        records.push(SearchRecord {
            id,
            task_id: task_id.to_string(),
            turn,
            state: pos.state.canonical_render(),
            action: action.0,
            q,
            quality_reward: step.reward.quality.to_f64(),
            cost_picousd: step.reward.cost.pico(),
            next_id: None,
        });
        pos = step.next;
    }
    Ok(records)
}

/// Replans at every turn of every task and commits the planner's choice.
/// Tasks run in parallel with per-task seeds derived from `config.seed`;
/// output order follows `task_ids`.
pub fn generate_dataset(
    env: &dyn Environment,
    task_ids: &[String],
    config: &SearchConfig,
    reward: &RewardSpec,
    planner: Planner,
) -> Result<Vec<SearchRecord>> {
    config.validate()?;
    let per_task: Vec<Vec<SearchRecord>> = task_ids
        .par_iter()
        .enumerate()
        .map(|(i, task)| run_task(env, task, seed::child_seed(config.seed, i as u64), config, reward, planner))
        .collect::<Result<_>>()?;
    Ok(per_task.into_iter().flatten().collect())
}

pub fn write_records(path: &Path, records: &[SearchRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<SearchRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
