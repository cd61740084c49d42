use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {}x{}, right is {}x{}", left.0, left.1, right.0, right.1)]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("normalization error: node {node} has an all-zero row")]
    ZeroRow { node: usize },

    #[error("compile error: {0}")]
    Compile(String),

    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error(
        "split error: class {class} has {available} candidate training nodes, need {required}"
    )]
    Split {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("standard split unavailable for this dataset ({0})")]
    StandardSplitUnavailable(String),

    #[error("numeric failure: non-finite loss at epoch {epoch} (learning rate {learning_rate})")]
    NonFinite { epoch: usize, learning_rate: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}
