use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::prompts::{judge_checklist, render_history, simulate_user, Domain};
use super::{BackendProfile, ChatClient, ChatMessage, Limiter};
use crate::dialogue::{DialogueState, ModelId, NextInput, TaskSpec};
use crate::env::{Environment, ResponseOutcome};
use crate::error::{Error, Result};

/// Backends for a live environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    /// One profile per action, in catalog order.
    pub candidates: Vec<BackendProfile>,
    pub user_simulator: BackendProfile,
    pub judge: BackendProfile,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
}

fn default_concurrency() -> usize {
    4
}

fn default_max_turns() -> usize {
    8
}

struct Shared {
    candidates: Vec<ChatClient>,
    user: ChatClient,
    judge: ChatClient,
    tasks: BTreeMap<String, TaskSpec>,
    max_turns: usize,
}

/// An [`Environment`] whose responses, user turns and checklist scores come
/// from chat-completions backends. Token counts are the providers' usage
/// figures. Not deterministic; forks share the backends and the request limit.
#[derive(Clone)]
pub struct GatewayEnv {
    shared: Arc<Shared>,
    task: Option<String>,
    last_response: Option<String>,
}

fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl GatewayEnv {
    pub fn new(config: &GatewayConfig, tasks: Vec<TaskSpec>) -> Result<Self> {
        if config.candidates.is_empty() {
            return Err(Error::Config("gateway.candidates must list at least one backend".into()));
        }
        if config.max_turns == 0 {
            return Err(Error::Config("gateway.max_turns must be >= 1".into()));
        }
        let limiter = Limiter::new(config.concurrency);
        let client = |p: &BackendProfile| ChatClient::new(p.clone(), limiter.clone());
        let mut by_id = BTreeMap::new();
        for t in tasks {
            t.validate()?;
            if let Some(dup) = by_id.insert(t.task_id.clone(), t) {
                return Err(Error::Config(format!("duplicate task id `{}`", dup.task_id)));
            }
        }
        Ok(GatewayEnv {
            shared: Arc::new(Shared {
                candidates: config.candidates.iter().map(client).collect::<Result<_>>()?,
                user: client(&config.user_simulator)?,
                judge: client(&config.judge)?,
                tasks: by_id,
                max_turns: config.max_turns,
            }),
            task: None,
            last_response: None,
        })
    }

    fn task(&self, state: &DialogueState) -> Result<&TaskSpec> {
        match &self.task {
            Some(id) if *id == state.task_id => Ok(&self.shared.tasks[id]),
            Some(id) => Err(Error::EnvState(format!("handle is on task `{id}`, state is for `{}`", state.task_id))),
            None => Err(Error::EnvState("step before reset".into())),
        }
    }
}

impl Environment for GatewayEnv {
    fn num_actions(&self) -> usize {
        self.shared.candidates.len()
    }

    fn task_ids(&self) -> Vec<String> {
        self.shared.tasks.keys().cloned().collect()
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn max_turns(&self) -> usize {
        self.shared.max_turns
    }

    fn reset(&mut self, task_id: &str) -> Result<DialogueState> {
        let task = self.shared.tasks.get(task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        self.task = Some(task_id.to_string());
        self.last_response = None;
        let tokens = task.initial_tokens.unwrap_or_else(|| estimate_tokens(&task.initial_input));
        Ok(DialogueState::new(task_id, task.initial_input.clone(), tokens))
    }

    fn step_response(&mut self, state: &DialogueState, action: ModelId) -> Result<ResponseOutcome> {
        if state.is_closed() {
            return Err(Error::EnvState("state is terminal".into()));
        }
        let task = self.task(state)?.clone();
        let client = self
            .shared
            .candidates
            .get(action.0)
            .ok_or(Error::InvalidModel { id: action.0, len: self.shared.candidates.len() })?;
        let mut messages = Vec::new();
        if let Some(k) = &task.prior_knowledge {
            messages.push(ChatMessage::new("system", k.clone()));
        }
        for turn in &state.history {
            messages.push(ChatMessage::new("user", turn.user_input.clone()));
            messages.push(ChatMessage::new("assistant", turn.response.clone()));
        }
        messages.push(ChatMessage::new("user", state.pending_input.clone()));
        let reply = client.chat_complete(&messages)?;

        let domain = Domain::from_task(&task);
        let mut exchanges: Vec<(&str, Option<&str>)> =
            state.history.iter().map(|t| (t.user_input.as_str(), Some(t.response.as_str()))).collect();
        exchanges.push((state.pending_input.as_str(), Some(reply.text.as_str())));
        let verdict =
            judge_checklist(&self.shared.judge, domain, &task.checklist, &render_history(domain, &exchanges))?;
        self.last_response = Some(reply.text.clone());
        Ok(ResponseOutcome { text: reply.text, tokens: reply.completion_tokens, score: verdict.score })
    }

    fn step_user(&mut self, state: &DialogueState) -> Result<NextInput> {
        let task = self.task(state)?.clone();
        let response =
            self.last_response.take().ok_or_else(|| Error::EnvState("step_user called before step_response".into()))?;
        if state.history.len() + 1 >= self.shared.max_turns {
            return Ok(NextInput::Terminal);
        }
        let mut exchanges: Vec<(&str, &str)> =
            state.history.iter().map(|t| (t.user_input.as_str(), t.response.as_str())).collect();
        exchanges.push((state.pending_input.as_str(), response.as_str()));
        simulate_user(&self.shared.user, &task, &exchanges)
    }

    fn fork(&self, _stream: u64) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
