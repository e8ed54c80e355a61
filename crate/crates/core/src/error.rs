use std::path::PathBuf;

/// Errors surfaced by the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unknown utterance id {0}")]
    UnknownUtterance(usize),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("zero-norm row {row} in {context}")]
    ZeroNorm { context: &'static str, row: usize },

    #[error("stale forward cache: model version {model}, cache version {cache}")]
    StaleCache { model: u64, cache: u64 },

    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}; diagnostic checkpoint written to {}", checkpoint.display())]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        checkpoint: PathBuf,
    },

    #[error("value {value} outside [{lo}, {hi}] for {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("trial list must contain both target and non-target trials")]
    SingleClass,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
