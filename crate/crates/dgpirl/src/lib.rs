//! Inverse reinforcement learning with deep Gaussian process reward models.
//!
//! The crate builds up from tabular MDP machinery to reward learners of
//! increasing flexibility, all trained against the same maximum-entropy
//! demonstration likelihood:
//!
//! * [`mdp`] — tabular MDPs, hard and soft (log-sum-exp) value iteration,
//!   trajectory sampling, policy evaluation and the expected-value-difference
//!   metric.
//! * [`maxent`] — the MaxEnt demonstration log-likelihood, its analytic
//!   reward gradient, and a linear-reward baseline trained with it.
//! * [`kernel`] — RBF covariances, Gram matrices, hyperparameter and input
//!   derivatives, and jittered Cholesky factorization.
//! * [`gpirl`] — single-layer sparse-GP reward learning (DTC conditional),
//!   the nonparametric baseline.
//! * [`dgp`] — the two-layer deep-GP reward model, its variational lower
//!   bound, analytic gradients, training loop and transfer prediction.
//! * [`worlds`] — procedural benchmark generators (object world, binary
//!   world, highway) with ground-truth rewards.
//! * [`opt`] — the shared line-searched L-BFGS ascent used by every trainer.
//! * [`gradcheck`] — finite-difference validation harnesses for all analytic
//!   gradients.

pub mod dgp;
pub mod error;
pub mod gpirl;
pub mod gradcheck;
pub mod kernel;
pub mod maxent;
pub mod mdp;
pub mod opt;
pub mod worlds;

mod sgp;

pub use error::{Error, Result};
