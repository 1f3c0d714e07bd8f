use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Linear solver failed (singular system, iteration cap, non-finite values).
    #[error("solver error: {0}")]
    Solver(String),

    /// Model construction, checkpoint or shape mismatch problems.
    #[error("model error: {0}")]
    Model(String),

    /// Training diverged or was misconfigured.
    #[error("training error: {0}")]
    Training(String),

    /// Evaluation / benchmark / export problems.
    #[error("eval error: {0}")]
    Eval(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
