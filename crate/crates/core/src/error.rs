// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error types shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Top-level error.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A token sequence does not fit the model context.
    #[error("sequence length {len} exceeds the maximum of {max}")]
    Length { len: usize, max: usize },

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    /// Training data cannot support the requested classifier.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The synthetic generator cannot fit the requested vocabulary.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A file did not match its declared format.
    #[error(transparent)]
    Format(#[from] FormatError),

    /// A remote toxicity scorer failed.
    #[error(transparent)]
    Scorer(#[from] ScorerError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised while decoding model, probe, dataset and prompt files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("tensor `{tensor}` has shape {found:?}, expected {expected:?}")]
    SizeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error(
        "file truncated: tensor `{tensor}` needs bytes up to {needed}, only {available} present"
    )]
    Truncated {
        tensor: String,
        needed: usize,
        available: usize,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("{what}: expected {expected}, found {found}")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: column `{column}` has non-binary value `{value}`")]
    NonBinary {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("invalid json: {0}")]
    Json(String),
}

/// Transport and decoding errors from an HTTP scorer.
#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },

    #[error("scorer returned HTTP {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },

    #[error("scorer unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("malformed scorer response: {0}")]
    MalformedBody(String),

    #[error("score for `{key}` out of range: {value}")]
    OutOfRange { key: String, value: f64 },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Short machine-readable tag, used for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Length { .. } => "length",
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => "numeric",
            Error::DegenerateData(_) => "degenerate_data",
            Error::Capacity(_) => "capacity",
            Error::Format(FormatError::UnsupportedVersion { .. }) => "version",
            Error::Format(_) => "format",
            Error::Scorer(_) => "scorer",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        FormatError::Json(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.into())
    }
}
