use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit code families:
/// configuration problems exit 2, unreadable or corrupt data exits 3,
/// evaluation degeneracies exit 4 and numeric failures exit 5.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate evaluation: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training aborted on a non-finite objective; carries the serialized
    /// model state so the driver can dump a checkpoint for post-mortem.
    #[error("numeric failure: non-finite ELBO at step {step}")]
    NonFiniteElbo { step: u64, checkpoint_json: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
