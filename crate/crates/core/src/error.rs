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

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("header mismatch in {path}: expected [{expected}], found [{found}]")]
    HeaderMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unparseable value {value:?} at row {row}, column {column}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row} violates record invariants: {violations}")]
    InvalidRow { row: usize, violations: String },

    #[error("bs_id {0:?} is not in any test set of the split manifest")]
    UnknownTestMember(String),

    #[error("bs_id {0:?} is missing from the split manifest")]
    MissingFromManifest(String),

    #[error("invalid split manifest: {0}")]
    Manifest(String),

    #[error("ambiguous join: duplicate key {0}")]
    AmbiguousJoin(String),

    #[error("{bs_id} at {timestamp} has {count} cells, at most 4 are supported")]
    TooManyCells {
        bs_id: String,
        timestamp: String,
        count: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("sum of |y| is zero")]
    ZeroTargetSum,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint integrity failure: {0}")]
    Checksum(String),

    #[error("model contains non-finite parameter values in {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("checkpoint and encoding plan do not match: {0}")]
    PlanMismatch(String),

    #[error("model has no BSID embedding table")]
    NoEmbedding,

    #[error("unknown bs_id {0:?} in ground truth")]
    UnknownStation(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers themselves rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite(_))
    }
}
