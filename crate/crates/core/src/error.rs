use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error("{what} {index} has zero norm")]
    ZeroNorm { what: &'static str, index: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid budget K={budget} for {frames} frames")]
    InvalidBudget { budget: usize, frames: usize },

    #[error("{what} of size {size} exceeds the limit of {limit}")]
    CapExceeded {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("kernel is not square ({rows}x{cols})")]
    NonSquareKernel { rows: usize, cols: usize },

    #[error("kernel is asymmetric at ({row}, {col}): deviation {deviation:e}")]
    AsymmetricKernel {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("duplicate frame index {0} in selection")]
    DuplicateIndex(usize),

    #[error("frame index {index} out of range for {frames} frames")]
    IndexOutOfRange { index: usize, frames: usize },

    #[error("every selected frame has zero relevance")]
    AllZeroNorms,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid token bounds: w_min={w_min}, w_max={w_max}")]
    InvalidBounds { w_min: u32, w_max: u32 },

    #[error("token budget {budget} cannot fit a single frame at w_min={w_min}")]
    BudgetTooSmall { budget: u64, w_min: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic {found:?} at byte 0, expected \"LDDREMB1\"")]
    BadMagic { found: [u8; 8] },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("malformed embedding file: {0}")]
    Malformed(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
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
