use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible stream allocation: {constraint} violated for user {user}")]
    InfeasibleAllocation { user: usize, constraint: String },

    #[error("infeasible precoder geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("degenerate alphabet: {attempts} consecutive rank-deficient channel draws")]
    DegenerateAlphabet { attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("instance is not unichain: {0}")]
    NotUnichain(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
