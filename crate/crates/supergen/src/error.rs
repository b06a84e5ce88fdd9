use std::path::PathBuf;

/// Crate-wide error type. Exit codes: config errors map to 1, missing
/// artifacts to 2, numeric failures to 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing input artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("insufficient pool for label {label}: have {have}, need {need}")]
    InsufficientPool { label: usize, have: usize, need: usize },

    #[error("no corpus sequence satisfies the sampling constraints")]
    ConstraintUnsatisfiable,

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("refusing to overwrite existing artifact {0} (use --force)")]
    WouldOverwrite(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// Process exit code for this error per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConstraintUnsatisfiable => 1,
            Error::MissingArtifact(_) | Error::WouldOverwrite(_) | Error::Io(_) => 2,
            Error::Numeric(_)
            | Error::InvalidSample(_)
            | Error::InsufficientPool { .. }
            | Error::Checkpoint(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
