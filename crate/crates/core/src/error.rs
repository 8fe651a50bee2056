use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. The CLI maps `Config` to exit code 2 and
/// `Data`/`Parse` to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("overlapping sampled regions: {}", format_pairs(.0))]
    Overlap(Vec<(String, String)>),

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("study interrupted after {completed} completed replicates")]
    Interrupted { completed: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(a, b)| format!("{a}/{b}")).collect::<Vec<_>>().join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
