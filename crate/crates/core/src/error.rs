use std::path::PathBuf;

/// Errors raised by ingestion, storage, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line count mismatch: {src_path} has {src_lines} lines, {tgt_path} has {tgt_lines}")]
    LineCountMismatch {
        src_path: PathBuf,
        tgt_path: PathBuf,
        src_lines: usize,
        tgt_lines: usize,
    },

    #[error("{path}:{line}: invalid UTF-8")]
    Encoding { path: PathBuf, line: usize },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid embedding set: {0}")]
    Embedding(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("zero vector at row {row} of {matrix}")]
    ZeroVector { matrix: &'static str, row: usize },

    #[error("neighborhood size k={k} exceeds pool size {pool}")]
    NeighborhoodTooLarge { k: usize, pool: usize },

    #[error("cannot sample {requested} items: at most {max_feasible} are feasible")]
    InfeasibleSample {
        requested: usize,
        max_feasible: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precision is undefined for an empty predicted link set")]
    EmptyPrediction,

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
