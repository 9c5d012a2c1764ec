// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation: missing inputs or contradictory options. Exit code 2.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] dapi_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A replayed run produced different bytes.
    #[error("replay mismatch in {0:?}")]
    ReplayMismatch(Vec<String>),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable error class.
    pub fn kind(&self) -> &'static str {
        use dapi_core::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                E::Argument(_) => "argument",
                E::Length { .. } => "length",
                E::Numeric(_) | E::NonFiniteLoss { .. } => "numeric",
                E::DegenerateData(_) => "degenerate_data",
                E::Capacity(_) => "capacity",
                E::Format(_) => "format",
                E::Scorer(_) => "scorer",
                E::Io(_) => "io",
            },
            CliError::Io(_) => "io",
            CliError::Json(_) => "format",
            CliError::ReplayMismatch(_) => "replay_mismatch",
        }
    }

    /// One-line JSON object for standard error.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "kind": self.kind(), "error": self.to_string() }).to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
