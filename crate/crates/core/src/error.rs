use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("position {position} exceeds max_seq {max_seq}")]
    SequenceTooLong { position: usize, max_seq: usize },
    #[error("position {position} does not follow cached maximum {max}")]
    NonMonotonePosition { position: usize, max: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind, used in CLI error JSON and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::NonMonotonePosition { .. } => "non_monotone_position",
            Error::InvalidInput(_) => "invalid_input",
            Error::Contract(_) => "contract_violation",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
