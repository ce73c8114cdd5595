use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no eligible match for {0}")]
    NoMatch(String),

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("no eligible matched pairs for the null model; fall back to a fixed baseline (default {default})")]
    NoBaseline { default: f64 },

    #[error("training data has a single class")]
    SingleClass,

    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (last L1 change {delta:e})"
    )]
    NotConverged { iterations: usize, delta: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("model file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
