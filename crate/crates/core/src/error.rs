use thiserror::Error;

use crate::simulator::RoundRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A rule or constant was requested outside its validity range.
    #[error("{rule} requires {condition}: got n={n}, f={f}{}", extra.as_deref().unwrap_or(""))]
    Precondition {
        rule: &'static str,
        condition: &'static str,
        n: usize,
        f: usize,
        extra: Option<String>,
    },

    #[error("invalid adversary view: {0}")]
    InvalidView(String),

    #[error("attack not applicable: {0}")]
    AttackInapplicable(String),

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("invalid learning-rate schedule: exponent p={p} must lie in (0.5, 1] so that sum(gamma_t) = inf and sum(gamma_t^2) < inf")]
    InvalidSchedule { p: f64 },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("divergence detected at round {round}: non-finite parameter vector")]
    Diverged { round: u64, record: Box<RoundRecord> },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
