//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a documented invariant (probability rows, finiteness,
    /// dimension mismatches, bad configuration).
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    /// Value iteration failed to reach the requested residual.
    #[error(
        "value iteration did not converge after {iterations} iterations \
         (residual {residual:.3e}, tol {tol:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    /// Cholesky factorization failed even with escalating jitter.
    #[error(
        "Cholesky failed after {attempts} jitter attempts \
         (smallest-eigenvalue estimate {min_eig_estimate:.3e})"
    )]
    CholeskyFailure {
        attempts: usize,
        min_eig_estimate: f64,
    },

    /// A linear solve left a residual above the documented tolerance.
    #[error("linear solve residual {residual:.3e} exceeds {tol:.3e}")]
    LinearSolve { residual: f64, tol: f64 },

    /// The optimizer produced a non-finite objective.
    #[error("optimizer diverged: {msg} ({} accepted objective values)", trace.len())]
    Divergence { msg: String, trace: Vec<f64> },

    /// A world generator could not produce a valid layout.
    #[error("world generation failed: {0}")]
    WorldGeneration(String),

    /// A training run exceeded its wall-clock budget.
    #[error("timed out after {elapsed_ms} ms (budget {budget_ms} ms)")]
    Timeout { elapsed_ms: u64, budget_ms: u64 },

    /// Model or world (de)serialization failed.
    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
