use std::path::PathBuf;

use thiserror::Error;

use crate::grid::BlockId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{}:{line}: {msg}", path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<input>".into()))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("diverged at iteration {iteration}: cost {cost:e} exceeds {limit:e}")]
    Diverged {
        iteration: u64,
        cost: f64,
        limit: f64,
    },

    #[error("non-finite gradient at iteration {iteration} in block ({},{})", block.i, block.j)]
    NonFiniteGradient { iteration: u64, block: BlockId },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("gossip protocol violation: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: Option<&std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.map(|p| p.to_path_buf()),
            line,
            msg: msg.into(),
        }
    }
}
