//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("face index {index} out of range for dimension {d}")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("no convergence after {iterations} iterations (last distance {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        /// Successive iterate distances, for post-mortem inspection.
        history: Vec<f64>,
    },
    #[error("non-monotone stencil: {0}")]
    Scheme(String),
    #[error("unstable iteration: {0}")]
    Instability(String),
    #[error("event budget of {budget} events exceeded at simulated time {time:.6}")]
    EventBudget { budget: u64, time: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
