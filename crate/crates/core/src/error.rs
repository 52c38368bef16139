use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv format error: {0}")]
    Format(String),

    #[error("cannot parse {value:?} at row {row}, column {column:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column {column} has zero variance over its available entries")]
    DegenerateColumn { column: usize },

    #[error("column {0:?} has no available entries")]
    EmptyColumn(String),

    #[error("features {i} and {j} are never jointly observed")]
    UnavailablePair { i: usize, j: usize },

    #[error("target is constant; normalised error is undefined")]
    ConstantTarget,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("class {0} has no labelled rows")]
    EmptyClass(u8),

    #[error("input lacks model columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
