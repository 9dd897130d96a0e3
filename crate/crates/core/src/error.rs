use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, finiteness, cache freshness).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite prediction at step {step}")]
    NonFinitePrediction { step: usize },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("unknown task `{task}`; available: {}", available.join(", "))]
    UnknownTask { task: String, available: Vec<String> },

    #[error("unknown environment `{0}`; available: two_zone, two_zone_left, pendulum, trap_corridor")]
    UnknownEnv(String),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("audit failure: {0}")]
    Audit(String),

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("missing checkpoint in {0}")]
    MissingCheckpoint(PathBuf),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// invariant or audit failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::UnknownTask { .. } | Error::UnknownEnv(_) | Error::UnsupportedSize(_) => 2,
            Error::Audit(_) | Error::BoundViolation(_) => 3,
            _ => 1,
        }
    }
}
