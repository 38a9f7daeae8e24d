use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model id {id} is not in a catalog of {len} models")]
    InvalidModel { id: usize, len: usize },

    #[error("dialogue is closed; no further exchanges can be appended")]
    DialogueClosed,

    #[error("invalid checklist score {0}; expected 0, 0.5 or 1")]
    InvalidScore(f64),

    #[error("checklist must have at least one item")]
    EmptyChecklist,

    #[error("score arity {got} does not match checklist length {expected}")]
    ScoreArity { expected: usize, got: usize },

    #[error("invalid price: {0}")]
    InvalidPrice(String),

    #[error("ratio reward is undefined for zero cost")]
    ZeroCost,

    #[error("environment config invalid: {0}")]
    EnvConfig(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("environment misuse: {0}")]
    EnvState(String),

    #[error("search: {0}")]
    Search(String),

    #[error("oracle enumeration of {sequences} sequences exceeds the budget of {budget}")]
    OracleBudget { sequences: u128, budget: u128 },

    #[error("retrieval: {0}")]
    Retrieval(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("training: {0}")]
    Training(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("episode for task `{task_id}` aborted after {turns} turns: {source}")]
    Episode { task_id: String, turns: usize, partial: Box<crate::eval::EpisodeResult>, source: Box<Error> },

    #[error("transport failed after {} attempts: {}", attempts.len(), attempts.join("; "))]
    Transport { attempts: Vec<String> },

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("judge: {0}")]
    Judge(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
