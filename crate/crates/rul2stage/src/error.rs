//! Crate-wide error type.
//!
//! Errors are grouped into the categories the CLI maps to exit codes:
//! configuration (2), data/IO (3) and numeric failures (4).

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, CLI arguments or parameter combinations.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file; carries file and 1-based line where known.
    #[error("parse error in {file}, line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Data that parses but violates a structural or value invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file is corrupt, truncated or of an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Tensor/feature dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite value or other numeric breakdown during compute.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Parse { .. } | Error::Data(_) | Error::Checkpoint(_) => 3,
            Error::Shape(_) | Error::Numeric(_) => 4,
        }
    }
}
