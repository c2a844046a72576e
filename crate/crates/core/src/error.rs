use std::path::PathBuf;

use thiserror::Error;

/// Row-level validation failure raised while loading a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based data row (the header is not counted).
    pub row: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("{} invalid row(s); first: {}", .0.len(), .0[0])]
    InvalidRows(Vec<RowError>),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("unknown block `{0}`")]
    UnknownBlock(String),

    #[error("design matrix is empty after dropping constant and duplicate columns")]
    EmptyDesign,

    #[error("design is missing column `{0}` referenced by the fit")]
    ColumnMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("off-support focal rows present ({0}); exact matching cannot extrapolate")]
    OffSupport(usize),

    #[error("nuisance fit failed: {0}")]
    Nuisance(String),

    #[error("bootstrap failed: {failed} of {total} replicates failed")]
    Bootstrap { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
