//! Dialogue state, checklists and the model catalog.
//!
//! Checklist scores are stored as integer half-points so totals, rewards and
//! success rates telescope exactly.

use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::PriceCard;
use crate::error::{read_to_string, Error, Result};

/// Index of a candidate model in the active catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub usize);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Checklist points counted in halves. Serialized as a decimal number of
/// points (a multiple of 0.5).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct Points(i64);

impl From<Points> for f64 {
    fn from(p: Points) -> f64 {
        p.to_f64()
    }
}

impl TryFrom<f64> for Points {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        let halves = value * 2.0;
        if !halves.is_finite() || halves.fract() != 0.0 || halves.abs() > 9.0e15 {
            return Err(Error::InvalidScore(value));
        }
        Ok(Points(halves as i64))
    }
}

impl Points {
    pub const ZERO: Points = Points(0);

    pub fn from_halves(halves: i64) -> Self {
        Points(halves)
    }

    pub fn halves(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl Add for Points {
    type Output = Points;
    fn add(self, rhs: Points) -> Points {
        Points(self.0 + rhs.0)
    }
}

impl Sub for Points {
    type Output = Points;
    fn sub(self, rhs: Points) -> Points {
        Points(self.0 - rhs.0)
    }
}

impl Neg for Points {
    type Output = Points;
    fn neg(self) -> Points {
        Points(-self.0)
    }
}

impl std::iter::Sum for Points {
    fn sum<I: Iterator<Item = Points>>(iter: I) -> Points {
        iter.fold(Points::ZERO, Add::add)
    }
}

impl fmt::Display for Points {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Item descriptions c_1..c_n.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Checklist {
    items: Vec<String>,
}

impl Checklist {
    pub fn new(items: Vec<String>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyChecklist);
        }
        if let Some(i) = items.iter().position(|s| s.trim().is_empty()) {
            return Err(Error::Config(format!("checklist item {} is empty", i + 1)));
        }
        Ok(Checklist { items })
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl TryFrom<Vec<String>> for Checklist {
    type Error = Error;
    fn try_from(items: Vec<String>) -> Result<Self> {
        Checklist::new(items)
    }
}

impl From<Checklist> for Vec<String> {
    fn from(c: Checklist) -> Self {
        c.items
    }
}

/// Per-item completion values, each 0, 0.5 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ChecklistScore {
    halves: Vec<u8>,
}

impl ChecklistScore {
    pub fn new(values: &[f64]) -> Result<Self> {
        let halves = values
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 0.5 {
                    Ok(1)
                } else if v == 1.0 {
                    Ok(2)
                } else {
                    Err(Error::InvalidScore(v))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(ChecklistScore { halves })
    }

    /// All-zero score for a checklist of `n` items.
    pub fn zeros(n: usize) -> Self {
        ChecklistScore { halves: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.halves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halves.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.halves.iter().map(|&h| f64::from(h) / 2.0).collect()
    }

    /// R = sum of item scores.
    pub fn total(&self) -> Points {
        Points(self.halves.iter().map(|&h| i64::from(h)).sum())
    }

    /// SR = R / n.
    pub fn success_rate(&self) -> Result<f64> {
        if self.halves.is_empty() {
            return Err(Error::EmptyChecklist);
        }
        Ok(self.total().to_f64() / self.halves.len() as f64)
    }
}

impl TryFrom<Vec<f64>> for ChecklistScore {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ChecklistScore::new(&v)
    }
}

impl From<ChecklistScore> for Vec<f64> {
    fn from(s: ChecklistScore) -> Self {
        s.values()
    }
}

/// Free-function form of [`ChecklistScore::total`].
pub fn score_total(score: &ChecklistScore) -> Points {
    score.total()
}

/// Free-function form of [`ChecklistScore::success_rate`].
pub fn success_rate(score: &ChecklistScore) -> Result<f64> {
    score.success_rate()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub user_input: String,
    pub user_tokens: u64,
    pub response: String,
    pub response_tokens: u64,
    pub model_id: ModelId,
}

/// The model's side of one exchange.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exchange {
    pub response: String,
    pub response_tokens: u64,
    pub model_id: ModelId,
}

/// The user's reply after a response, or the end of the dialogue.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextInput {
    Input { text: String, tokens: u64 },
    Terminal,
}

/// s_t: the completed turns plus the pending user input.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueState {
    pub task_id: String,
    pub history: Vec<Turn>,
    pub pending_input: String,
    pub pending_tokens: u64,
    /// Set once the user has ended the dialogue; `pending_input` is then empty.
    pub closed: bool,
}

impl DialogueState {
    pub fn new(task_id: impl Into<String>, input: impl Into<String>, tokens: u64) -> Self {
        DialogueState {
            task_id: task_id.into(),
            history: Vec::new(),
            pending_input: input.into(),
            pending_tokens: tokens,
            closed: false,
        }
    }

    /// 1-based index t of the pending turn.
    pub fn turn_index(&self) -> usize {
        self.history.len() + 1
    }

    /// L(τ_{t-1}): tokens of every completed user input and response.
    pub fn history_tokens(&self) -> u64 {
        self.history.iter().map(|t| t.user_tokens + t.response_tokens).sum()
    }

    /// Model that answered the previous turn, if any.
    pub fn last_model(&self) -> Option<ModelId> {
        self.history.last().map(|t| t.model_id)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Returns the successor state after `exchange` answered the pending input
    /// and the user replied with `next`.
    pub fn append_exchange(&self, exchange: Exchange, next: NextInput, num_models: usize) -> Result<Self> {
        if self.closed {
            return Err(Error::DialogueClosed);
        }
        if exchange.model_id.0 >= num_models {
            return Err(Error::InvalidModel { id: exchange.model_id.0, len: num_models });
        }
        let mut out = self.clone();
        out.history.push(Turn {
            user_input: std::mem::take(&mut out.pending_input),
            user_tokens: out.pending_tokens,
            response: exchange.response,
            response_tokens: exchange.response_tokens,
            model_id: exchange.model_id,
        });
        match next {
            NextInput::Input { text, tokens } => {
                out.pending_input = text;
                out.pending_tokens = tokens;
            }
            NextInput::Terminal => {
                out.pending_tokens = 0;
                out.closed = true;
            }
        }
        Ok(out)
    }

    /// Stable text form: `U: <text>` and `A[<model>]: <text>` lines, ending
    /// with the pending input (or `END` once closed). Newlines and backslashes
    /// inside utterances are escaped so the mapping is injective.
    pub fn canonical_render(&self) -> String {
        let mut out = String::new();
        for turn in &self.history {
            push_line(&mut out, "U: ", &turn.user_input);
            push_line(&mut out, &format!("A[{}]: ", turn.model_id), &turn.response);
        }
        if self.closed {
            out.push_str("END\n");
        } else {
            push_line(&mut out, "U: ", &self.pending_input);
        }
        out
    }
}

fn push_line(out: &mut String, tag: &str, text: &str) {
    out.push_str(tag);
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('\n');
}

/// A candidate model M_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: ModelId,
    pub name: String,
    pub price: PriceCard,
    pub binding: Binding,
}

/// What executes a model: an action index of a synthetic environment or a
/// model name on a chat-completions backend.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Synthetic(usize),
    Gateway(String),
}

/// Ordered set of candidate models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    models: Vec<ModelSpec>,
}

impl Catalog {
    pub fn new(models: Vec<ModelSpec>) -> Result<Self> {
        for (i, m) in models.iter().enumerate() {
            if m.model_id.0 != i {
                return Err(Error::Config(format!(
                    "catalog entry {i} (`{}`) has model_id {}; ids must be 0..N in order",
                    m.name, m.model_id
                )));
            }
        }
        Ok(Catalog { models })
    }

    /// `n` zero-priced synthetic models named `m0..m{n-1}`.
    pub fn synthetic(n: usize) -> Self {
        Catalog {
            models: (0..n)
                .map(|i| ModelSpec {
                    model_id: ModelId(i),
                    name: format!("m{i}"),
                    price: PriceCard::FREE,
                    binding: Binding::Synthetic(i),
                })
                .collect(),
        }
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, id: ModelId) -> Result<&ModelSpec> {
        self.models.get(id.0).ok_or(Error::InvalidModel { id: id.0, len: self.models.len() })
    }

    pub fn prices(&self) -> Vec<PriceCard> {
        self.models.iter().map(|m| m.price).collect()
    }
}

/// (p_usr, C, x_1) plus optional domain knowledge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    pub user_profile: String,
    pub checklist: Checklist,
    pub initial_input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_knowledge: Option<String>,
    /// Prompt family for simulator and judge (`general`, `ecommerce`, `medical`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// L(x_1). Later inputs are measured by the backend; without this field
    /// the first input is estimated from its whitespace-separated words.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_tokens: Option<u64>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.initial_input.trim().is_empty() {
            return Err(Error::Config(format!("task `{}`: initial_input is empty", self.task_id)));
        }
        Ok(())
    }
}

/// Reads tasks from a single JSON object, a JSON array, or JSONL.
pub fn parse_tasks(text: &str) -> Result<Vec<TaskSpec>> {
    let trimmed = text.trim_start();
    let tasks: Vec<TaskSpec> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)?
    } else if let Ok(one) = serde_json::from_str::<TaskSpec>(trimmed) {
        vec![one]
    } else {
        trimmed
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?
    };
    for t in &tasks {
        t.validate()?;
    }
    Ok(tasks)
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>> {
    parse_tasks(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn exchange(text: &str, tokens: u64, model: usize) -> Exchange {
        Exchange { response: text.into(), response_tokens: tokens, model_id: ModelId(model) }
    }

    fn input(text: &str, tokens: u64) -> NextInput {
        NextInput::Input { text: text.into(), tokens }
    }

    #[test]
    fn append_updates_turn_index() {
        let s = DialogueState::new("t", "x1", 3);
        let s2 = s.append_exchange(exchange("y1", 10, 0), input("x2", 5), 2).unwrap();
        assert_eq!(s2.history.len(), 1);
        assert_eq!(s2.turn_index(), 2);
        assert_eq!(s2.pending_input, "x2");
        assert_eq!(s2.history_tokens(), 13);
        // input unchanged
        assert_eq!(s.turn_index(), 1);
        assert_eq!(s.pending_input, "x1");
    }

    #[test]
    fn terminal_closes_state() {
        let s = DialogueState::new("t", "x1", 3);
        let closed = s.append_exchange(exchange("y1", 10, 1), NextInput::Terminal, 2).unwrap();
        assert!(closed.is_closed());
        assert!(matches!(closed.append_exchange(exchange("y2", 1, 0), input("x", 1), 2), Err(Error::DialogueClosed)));
    }

    #[test]
    fn invalid_model_rejected() {
        let s = DialogueState::new("t", "x1", 3);
        assert!(matches!(
            s.append_exchange(exchange("y", 1, 2), input("x", 1), 2),
            Err(Error::InvalidModel { id: 2, len: 2 })
        ));
    }

    #[test]
    fn chained_appends_grow_history() {
        for t in 0..12 {
            let mut s = DialogueState::new("t", "x", 1);
            for k in 0..t {
                s = s.append_exchange(exchange("y", 2, k % 3), input("x", 1), 3).unwrap();
            }
            assert_eq!(s.history.len(), t);
            assert_eq!(s.turn_index(), t + 1);
            assert_eq!(s.history_tokens(), 3 * t as u64);
        }
    }

    #[test]
    fn totals_and_success_rate() {
        let s = ChecklistScore::new(&[1.0, 0.5, 0.0, 1.0]).unwrap();
        assert_eq!(score_total(&s).to_f64(), 2.5);
        assert_eq!(success_rate(&s).unwrap(), 0.625);
        assert_eq!(ChecklistScore::zeros(4).total(), Points::ZERO);
        assert_eq!(ChecklistScore::new(&[1.0; 7]).unwrap().total().to_f64(), 7.0);
        assert_eq!(ChecklistScore::new(&[1.0; 7]).unwrap().success_rate().unwrap(), 1.0);
        assert_eq!(ChecklistScore::new(&[0.5]).unwrap().success_rate().unwrap(), 0.5);
        assert!(matches!(ChecklistScore::zeros(0).success_rate(), Err(Error::EmptyChecklist)));
        assert!(matches!(ChecklistScore::new(&[0.3]), Err(Error::InvalidScore(_))));
    }

    #[test]
    fn render_format() {
        let s = DialogueState::new("t", "hi", 1);
        assert_eq!(s.canonical_render(), "U: hi\n");
        let s2 = s.append_exchange(exchange("hello\nthere", 2, 1), input("more", 1), 2).unwrap();
        assert_eq!(s2.canonical_render(), "U: hi\nA[1]: hello\\nthere\nU: more\n");
        assert_eq!(s2.canonical_render(), s2.clone().canonical_render());
    }

    #[test]
    fn render_distinguishes_model_ids() {
        let s = DialogueState::new("t", "q", 1);
        let a = s.append_exchange(exchange("r", 2, 0), input("q2", 1), 2).unwrap();
        let b = s.append_exchange(exchange("r", 2, 1), input("q2", 1), 2).unwrap();
        assert_ne!(a.canonical_render(), b.canonical_render());
    }

    #[test]
    fn render_is_injective_on_corpus() {
        // Texts chosen to collide under a naive newline-joined format.
        let texts = ["a", "a\nU: b", "b", "a\\nU: b", "", "U: a", "A[0]: a"];
        let mut states = Vec::new();
        for x1 in texts {
            for y1 in texts {
                for m in 0..2 {
                    for x2 in texts {
                        let s = DialogueState::new("t", x1, 1);
                        states.push(s.append_exchange(exchange(y1, 1, m), input(x2, 1), 2).unwrap());
                    }
                }
            }
        }
        let renders: HashSet<String> = states.iter().map(|s| s.canonical_render()).collect();
        let distinct: HashSet<&DialogueState> = states.iter().collect();
        assert_eq!(renders.len(), distinct.len());
    }

    #[test]
    fn task_files_parse_in_all_shapes() {
        let one = r#"{"task_id":"a","user_profile":"p","checklist":["c1","c2"],"initial_input":"hi"}"#;
        assert_eq!(parse_tasks(one).unwrap().len(), 1);
        let jsonl = format!("{one}\n{}\n", one.replace("\"a\"", "\"b\""));
        let tasks = parse_tasks(&jsonl).unwrap();
        assert_eq!(tasks[1].task_id, "b");
        assert_eq!(tasks[0].checklist.len(), 2);
        assert!(parse_tasks(&one.replace("\"hi\"", "\"  \"")).is_err());
        assert!(parse_tasks(&one.replace("[\"c1\",\"c2\"]", "[]")).is_err());
    }
}
