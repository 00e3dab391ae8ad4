use thiserror::Error;

use crate::grid::DiscreteProfile;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid dimension, side length, grid density or option value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A point or site outside the box it was asked about.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called outside its documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The iteration budget ran out before the stopping rule fired.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Box<DiscreteProfile>,
    },

    /// An iterate broke a structural property the scheme guarantees
    /// (monotone descent from a supersolution, energy decrease).
    #[error("scheme integrity violated at iteration {iteration}: {what}")]
    SchemeIntegrity { iteration: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
