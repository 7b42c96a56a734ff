use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("construction unavailable: {0}")]
    ConstructionUnavailable(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("invalid initialisation: {0}")]
    InvalidInit(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
