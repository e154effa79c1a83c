use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QrError {
    /// The kernel or state space is malformed (negative rate, misclassified transition, ...).
    #[error("malformed queueing system: {0}")]
    Structural(String),

    /// The chain does not satisfy the unichain / monotone-reachability requirements.
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("not a Ferrers set: {0}")]
    NotFerrers(String),

    #[error("not a balance function: {0}")]
    NotBalance(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("truncation too small: captured mass {mass:.3e} at cap {cap}, increase the cap")]
    TruncationTooSmall { cap: u32, mass: f64 },

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("policy iteration did not converge: {0}")]
    PolicyIteration(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, QrError>;
