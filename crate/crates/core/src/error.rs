use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Bad magic bytes or an unrecognised header.
    #[error("format error: {0}")]
    Format(String),

    /// Declared sizes disagree with the bytes actually present.
    #[error("length mismatch: header declares {expected} payload bytes, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },

    /// A value violates a type invariant (non-finite float, empty shape, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate {what}: {key}")]
    Duplicate { what: &'static str, key: String },

    #[error("gap in token ids: expected id {expected}, found {found}")]
    IdGap { expected: usize, found: usize },

    #[error("document {doc_id}: token id {token_id} out of vocabulary (L = {vocab_size})")]
    OutOfVocabulary {
        doc_id: String,
        token_id: u64,
        vocab_size: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{what} count mismatch: expected {expected}, got {actual}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A hyper-parameter outside its valid range, e.g. `K > L`.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input on which a numerical routine has no meaningful answer.
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical routines themselves rather than of
    /// the data handed to them.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Degenerate(_))
    }
}
