use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum RecallError {
    /// Tensor or network shapes do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input violates an operation's domain (empty sequence, zero vector, bad range).
    #[error("domain error: {0}")]
    Domain(String),

    /// A corpus file failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Unknown id in an embedding table or corpus.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Training phases executed out of order.
    #[error("phase error: {0}")]
    Phase(String),

    /// Optimization produced non-finite values.
    #[error("divergence in {phase}: {detail}")]
    Diverged { phase: String, detail: String },

    /// Persistent artifact (checkpoint or index) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Gradient check exceeded tolerance.
    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RecallError>;
