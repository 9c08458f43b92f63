use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A problem, lattice or run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// The iterative linear solver stalled before reaching its tolerance.
    #[error("linear solver did not converge after {} cycles (last relative residual {:.3e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    Solver { history: Vec<f64> },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// An estimator could not meet its accuracy target.
    #[error("estimator failure: {0}")]
    Estimator(String),
}
