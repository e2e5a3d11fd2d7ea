use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch in {field}: expected {expected}, found {found}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite entry in {field} at ({row}, {col})")]
    NonFiniteEntry {
        field: &'static str,
        row: usize,
        col: usize,
    },

    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("cholesky factorization failed on a {0}x{0} matrix that should be positive definite")]
    FactorizationFailure(usize),

    #[error("no text embedding for observation label {0}")]
    MissingTextForLabel(u32),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("bit width {0} is not a multiple of 64")]
    BitsNotWordAligned(usize),

    #[error("bit width mismatch: index has {index} bits, query has {query}")]
    BitsMismatch { index: usize, query: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} at byte 4 (supported: {supported})")]
    VersionUnsupported { found: u32, supported: u32 },

    #[error("truncated payload at byte {offset}: needed {needed} bytes, {available} available")]
    TruncatedPayload {
        offset: u64,
        needed: u64,
        available: u64,
    },

    #[error("non-finite float at byte {offset} (row {row}, col {col})")]
    NonFiniteInFile { offset: u64, row: usize, col: usize },

    #[error("malformed file at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numeric pipeline, as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::FactorizationFailure(_) | Error::NonFiniteLoss { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
