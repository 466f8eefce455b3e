//! Maximum-entropy demonstration log-likelihood, its analytic gradient with
//! respect to the reward vector, and the linear-reward baseline trained
//! with it.
//!
//! The likelihood of a demonstration set is
//! `sum_h sum_t (Q(s,a) - V(s)) = sum log pi(a|s)` under the converged soft
//! solution. Its reward gradient is obtained by implicit differentiation of
//! the converged soft Bellman fixed point: with `J = dV/dr = (I - gamma
//! P_pi)^{-1}`, the gradient is the demonstrated state counts plus a
//! discounted visitation correction solved from one linear system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    soft_value_iteration, DemonstrationSet, RewardVector, SoftSolution, TabularMdp,
};
use crate::opt::{maximize, OptimizerConfig};

/// Log-likelihood value and its gradient with respect to the reward vector.
#[derive(Debug, Clone)]
pub struct LikelihoodResult {
    pub log_lik: f64,
    pub grad_r: DVector<f64>,
}

/// Linear reward model `r(s) = w' phi(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRewardModel {
    #[serde(with = "weights_serde")]
    pub weights: DVector<f64>,
}

mod weights_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        w: &DVector<f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        w.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

impl LinearRewardModel {
    /// Reward vector over states given their feature matrix.
    pub fn reward(&self, features: &DMatrix<f64>) -> Result<RewardVector> {
        if features.ncols() != self.weights.len() {
            return Err(Error::invalid(
                "features",
                format!(
                    "{} columns vs {} weights",
                    features.ncols(),
                    self.weights.len()
                ),
            ));
        }
        RewardVector::new(features * &self.weights)
    }
}

/// MaxEnt demonstration log-likelihood under a converged soft solution.
///
/// Always `<= 0`. If a demonstrated pair has an exactly-zero policy
/// probability (impossible for finite rewards, so it flags corruption), a
/// `-inf` sentinel is returned and a diagnostic logged.
pub fn maxent_log_likelihood(
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    soft: &SoftSolution,
) -> f64 {
    let mut total = 0.0;
    for traj in &demos.trajectories {
        for &(s, a) in traj {
            debug_assert!(s < mdp.n_states() && a < mdp.n_actions());
            let logp = soft.q[(s, a)] - soft.v[s];
            if !logp.is_finite() {
                log::warn!(
                    "demonstrated pair ({s},{a}) has log-probability {logp}; \
                     returning -inf sentinel"
                );
                return f64::NEG_INFINITY;
            }
            // Guard fp dust: log pi is mathematically <= 0.
            total += logp.min(0.0);
        }
    }
    total
}

/// Analytic gradient `d log p(M|r) / dr` at the converged soft solution.
pub fn maxent_gradient(
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    soft: &SoftSolution,
) -> Result<DVector<f64>> {
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let counts = demos.state_action_counts(n, mdp.n_actions());
    let state_counts = counts.column_sum();

    // b[s'] = gamma * sum_{(s,a) in demos} P[s,a,s'] - counts[s']
    let mut b = -&state_counts;
    for a in 0..mdp.n_actions() {
        let ca = counts.column(a).clone_owned();
        b += mdp.transition(a).tr_mul(&ca) * gamma;
    }

    // Solve (I - gamma P_pi^T) y = b, then grad = counts + y.
    let p_pi = mdp.policy_transition(&soft.policy);
    let mut m = -p_pi.transpose() * gamma;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let lu = m.clone().lu();
    let y = lu.solve(&b).ok_or(Error::LinearSolve {
        residual: f64::INFINITY,
        tol: 1e-6,
    })?;
    let residual = (&m * &y - &b).amax() / (1.0 + b.amax());
    if residual > 1e-6 {
        return Err(Error::LinearSolve {
            residual,
            tol: 1e-6,
        });
    }
    Ok(state_counts + y)
}

/// Convenience wrapper: run soft value iteration for `r` and return the
/// likelihood together with its reward gradient.
pub fn maxent_evaluate(
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    r: &RewardVector,
    inner_tol: f64,
) -> Result<LikelihoodResult> {
    let soft = soft_value_iteration(mdp, r, inner_tol, mdp.default_max_iter(inner_tol))?;
    let log_lik = maxent_log_likelihood(demos, mdp, &soft);
    let grad_r = maxent_gradient(demos, mdp, &soft)?;
    Ok(LikelihoodResult { log_lik, grad_r })
}

/// Options for [`fit_linear_maxent`].
#[derive(Debug, Clone)]
pub struct LinearFitOptions {
    pub opt: OptimizerConfig,
    /// Soft value iteration tolerance used for every objective evaluation.
    pub inner_tol: f64,
}

impl Default for LinearFitOptions {
    fn default() -> Self {
        LinearFitOptions {
            opt: OptimizerConfig::default(),
            inner_tol: 1e-10,
        }
    }
}

/// Fit a linear reward model by maximizing the MaxEnt likelihood of the
/// demonstrations; the chain rule gives `dL/dw = X' (dL/dr)`.
pub fn fit_linear_maxent(
    demos: &DemonstrationSet,
    features: &DMatrix<f64>,
    mdp: &TabularMdp,
    opts: &LinearFitOptions,
) -> Result<LinearRewardModel> {
    if features.nrows() != mdp.n_states() {
        return Err(Error::invalid(
            "features",
            format!(
                "{} rows vs {} states",
                features.nrows(),
                mdp.n_states()
            ),
        ));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features", "non-finite entry"));
    }
    demos.validate(mdp.n_states(), mdp.n_actions())?;
    let m0 = features.ncols();
    let mut objective = |w: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let r = RewardVector::new(features * w)?;
        let res = maxent_evaluate(demos, mdp, &r, opts.inner_tol)?;
        Ok((res.log_lik, features.tr_mul(&res.grad_r)))
    };
    let out = maximize(&mut objective, DVector::zeros(m0), None, &opts.opt, None)?;
    Ok(LinearRewardModel { weights: out.x })
}
