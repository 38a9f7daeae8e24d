//! Live backend over the standard chat-completions HTTP protocol: candidate
//! models, the user simulator and the checklist judge.

mod env;
mod prompts;

pub use env::{GatewayConfig, GatewayEnv};
pub use prompts::{
    judge_checklist, parse_judge_reply, render_checklist, render_history, simulate_user, Domain, JudgeVerdict,
    END_MARKER,
};

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One chat-completions endpoint and model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    /// First backoff delay; doubles after every failed attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

impl BackendProfile {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        BackendProfile {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config(format!("backend `{}`: timeout_secs must be positive", self.model)));
        }
        if self.endpoint.is_empty() {
            return Err(Error::Config(format!("backend `{}`: endpoint is empty", self.model)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.into(), content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Failed attempts before the successful one.
    pub retries: u32,
    pub attempt_log: Vec<String>,
}

/// Caps in-flight requests across every client sharing it.
#[derive(Debug)]
pub struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    pub fn new(slots: usize) -> Arc<Self> {
        Arc::new(Limiter { free: Mutex::new(slots.max(1)), cv: Condvar::new() })
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct Envelope {
    choices: Vec<Choice>,
    usage: Usage,
}

#[derive(Deserialize)]
struct Choice {
    message: EnvelopeMessage,
}

#[derive(Deserialize)]
struct EnvelopeMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// A blocking client for one [`BackendProfile`].
#[derive(Clone)]
pub struct ChatClient {
    profile: BackendProfile,
    agent: ureq::Agent,
    limiter: Arc<Limiter>,
}

enum Attempt {
    Done(std::result::Result<ChatReply, Error>),
    Retry(String),
}

impl ChatClient {
    pub fn new(profile: BackendProfile, limiter: Arc<Limiter>) -> Result<Self> {
        profile.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(profile.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(ChatClient { profile, agent, limiter })
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    /// Sends `messages` and returns the first choice's text with the
    /// provider-reported usage. Transport failures, 429 and 5xx responses are
    /// retried with exponential backoff; other statuses fail at once.
    pub fn chat_complete(&self, messages: &[ChatMessage]) -> Result<ChatReply> {
        let token = match &self.profile.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::Config(format!("environment variable `{var}` is not set")))?,
            ),
            None => None,
        };
        let body = RequestBody { model: &self.profile.model, messages, temperature: self.profile.temperature };
        let mut log = Vec::new();
        for attempt in 0..=self.profile.max_retries {
            if attempt > 0 {
                let delay = self.profile.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body, token.as_deref(), attempt, &log) {
                Attempt::Done(Ok(reply)) => return Ok(reply),
                Attempt::Done(Err(Error::Transport { attempts })) => {
                    log.extend(attempts);
                    return Err(Error::Transport { attempts: log });
                }
                Attempt::Done(Err(e)) => return Err(e),
                Attempt::Retry(why) => log.push(format!("attempt {}: {why}", attempt + 1)),
            }
        }
        Err(Error::Transport { attempts: log })
    }

    fn attempt(&self, body: &RequestBody<'_>, token: Option<&str>, attempt: u32, log: &[String]) -> Attempt {
        let _permit = self.limiter.acquire();
        let mut request = self.agent.post(&self.profile.endpoint).header("content-type", "application/json");
        if let Some(t) = token {
            request = request.header("authorization", format!("Bearer {t}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("status {status}, unreadable body: {e}")),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("status {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Done(Err(Error::Transport {
                attempts: vec![format!(
                    "attempt {}: status {status}: {}",
                    attempt + 1,
                    text.chars().take(200).collect::<String>()
                )],
            }));
        }
        let envelope: Envelope = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => return Attempt::Done(Err(Error::Malformed(format!("chat response envelope: {e}")))),
        };
        let Some(choice) = envelope.choices.into_iter().next() else {
            return Attempt::Done(Err(Error::Malformed("chat response has no choices".into())));
        };
        Attempt::Done(Ok(ChatReply {
            text: choice.message.content,
            prompt_tokens: envelope.usage.prompt_tokens,
            completion_tokens: envelope.usage.completion_tokens,
            retries: attempt,
            attempt_log: log.to_vec(),
        }))
    }
}
