use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty click log")]
    EmptyClickLog,

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("unknown query id {0}")]
    UnknownQuery(u32),

    #[error("unknown product id {0}")]
    UnknownProduct(u32),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value at pair {index} ({what})")]
    NonFinite { index: usize, what: &'static str },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("batch mixes pair roles {0} and {1}")]
    MixedRoles(crate::pairs::Role, crate::pairs::Role),

    #[error("training failed at batch {batch}: {source}")]
    Training {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("negative grade {0}")]
    NegativeGrade(f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("rank correlation undefined for constant input")]
    ConstantInput,

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
