//! Tabular MDP representation, hard and soft value iteration, trajectory
//! sampling, policy evaluation and the expected-value-difference metric.
//!
//! All operations are pure functions of their inputs; every type is immutable
//! after construction and safe to share across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance for probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

/// Default sup-norm tolerance for value iteration.
pub const DEFAULT_TOL: f64 = 1e-8;

/// A finite MDP with dense per-action transition matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// One `n x n` row-stochastic matrix per action: `transitions[a][(s, s')]`.
    transitions: Vec<DMatrix<f64>>,
    gamma: f64,
    initial_dist: DVector<f64>,
}

impl TabularMdp {
    pub fn new(
        transitions: Vec<DMatrix<f64>>,
        gamma: f64,
        initial_dist: DVector<f64>,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::invalid("mdp", "at least one action required"));
        }
        let n = transitions[0].nrows();
        if n == 0 {
            return Err(Error::invalid("mdp", "at least one state required"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("mdp", format!("gamma {gamma} not in (0,1)")));
        }
        for (a, p) in transitions.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::invalid(
                    "mdp",
                    format!("transition matrix for action {a} is not {n}x{n}"),
                ));
            }
            for s in 0..n {
                let mut sum = 0.0;
                for sp in 0..n {
                    let v = p[(s, sp)];
                    if !(v >= 0.0) {
                        return Err(Error::invalid(
                            "mdp",
                            format!("P[{s}][{a}][{sp}] = {v} is negative or NaN"),
                        ));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::invalid(
                        "mdp",
                        format!("P[{s}][{a}] sums to {sum}, expected 1 within {PROB_TOL}"),
                    ));
                }
            }
        }
        if initial_dist.len() != n {
            return Err(Error::invalid("mdp", "initial_dist length mismatch"));
        }
        let total: f64 = initial_dist.iter().sum();
        if (total - 1.0).abs() > PROB_TOL || initial_dist.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid(
                "mdp",
                format!("initial_dist sums to {total} or has negative entries"),
            ));
        }
        Ok(TabularMdp {
            n_states: n,
            n_actions: transitions.len(),
            transitions,
            gamma,
            initial_dist,
        })
    }

    /// Convenience constructor with a uniform initial distribution.
    pub fn with_uniform_start(transitions: Vec<DMatrix<f64>>, gamma: f64) -> Result<Self> {
        let n = transitions.first().map(|p| p.nrows()).unwrap_or(0);
        let init = DVector::from_element(n, 1.0 / n.max(1) as f64);
        TabularMdp::new(transitions, gamma, init)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_dist(&self) -> &DVector<f64> {
        &self.initial_dist
    }

    pub fn transition(&self, action: usize) -> &DMatrix<f64> {
        &self.transitions[action]
    }

    /// Policy-marginalized transition matrix `P_pi[s, s'] = sum_a pi[s,a] P[s,a,s']`.
    pub fn policy_transition(&self, policy: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n_states;
        let mut p_pi = DMatrix::zeros(n, n);
        for a in 0..self.n_actions {
            let pa = &self.transitions[a];
            for s in 0..n {
                let w = policy[(s, a)];
                if w != 0.0 {
                    for sp in 0..n {
                        p_pi[(s, sp)] += w * pa[(s, sp)];
                    }
                }
            }
        }
        p_pi
    }

    /// Iteration budget from the contraction rate: `10 * ceil(log(tol (1-gamma)) / log(gamma))`.
    pub fn default_max_iter(&self, tol: f64) -> usize {
        let k = ((tol * (1.0 - self.gamma)).ln() / self.gamma.ln()).ceil();
        (10.0 * k.max(1.0)) as usize
    }
}

/// Per-state reward values; finite entries only.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    values: DVector<f64>,
}

impl RewardVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("reward", "non-finite entry"));
        }
        Ok(RewardVector { values })
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        RewardVector::new(DVector::from_vec(values))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }
}

impl Serialize for RewardVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.as_slice().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RewardVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(deserializer)?;
        RewardVector::from_vec(v).map_err(D::Error::custom)
    }
}

/// Converged soft (log-sum-exp) Bellman solution.
#[derive(Debug, Clone)]
pub struct SoftSolution {
    /// `q[(s, a)]`.
    pub q: DMatrix<f64>,
    /// `v[s] = logsumexp_a q[(s, a)]`, exactly by construction.
    pub v: DVector<f64>,
    /// `policy[(s, a)] = exp(q[(s,a)] - v[s])`, row-stochastic.
    pub policy: DMatrix<f64>,
    /// Final sup-norm Bellman residual on `v`.
    pub residual: f64,
}

/// Demonstration trajectories as `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemonstrationSet {
    pub trajectories: Vec<Vec<(usize, usize)>>,
}

impl DemonstrationSet {
    pub fn new(trajectories: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if trajectories.iter().any(|t| t.is_empty()) {
            return Err(Error::invalid("demonstrations", "empty trajectory"));
        }
        Ok(DemonstrationSet { trajectories })
    }

    /// Check all indices against an MDP's dimensions.
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        for (h, traj) in self.trajectories.iter().enumerate() {
            for &(s, a) in traj {
                if s >= n_states || a >= n_actions {
                    return Err(Error::invalid(
                        "demonstrations",
                        format!("pair ({s},{a}) out of range in trajectory {h}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Demonstrated pair counts as an `n_states x n_actions` matrix.
    pub fn state_action_counts(&self, n_states: usize, n_actions: usize) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(n_states, n_actions);
        for traj in &self.trajectories {
            for &(s, a) in traj {
                c[(s, a)] += 1.0;
            }
        }
        c
    }

    /// A new set holding the first `count` trajectories.
    pub fn prefix(&self, count: usize) -> DemonstrationSet {
        DemonstrationSet {
            trajectories: self.trajectories[..count.min(self.trajectories.len())].to_vec(),
        }
    }
}

/// One action per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
}

impl DeterministicPolicy {
    /// Row-stochastic matrix form (a 1 in the chosen column).
    pub fn to_stochastic(&self, n_actions: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.actions.len(), n_actions);
        for (s, &a) in self.actions.iter().enumerate() {
            m[(s, a)] = 1.0;
        }
        m
    }
}

fn check_reward(mdp: &TabularMdp, r: &RewardVector) -> Result<()> {
    if r.len() != mdp.n_states() {
        return Err(Error::invalid(
            "reward",
            format!("length {} != n_states {}", r.len(), mdp.n_states()),
        ));
    }
    Ok(())
}

/// Hard (max) value iteration to sup-norm residual `tol`.
///
/// Returns the value function and the greedy policy, ties broken by the
/// lowest action index.
pub fn hard_value_iteration(
    mdp: &TabularMdp,
    r: &RewardVector,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, DeterministicPolicy)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("{tol} must be positive")));
    }
    check_reward(mdp, r)?;
    let n = mdp.n_states();
    let mut v = DVector::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let (v_new, _) = hard_backup(mdp, r, &v);
        residual = (&v_new - &v).amax();
        v = v_new;
        if residual <= tol {
            let (_, actions) = hard_backup(mdp, r, &v);
            return Ok((v, DeterministicPolicy { actions }));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
        tol,
    })
}

fn hard_backup(mdp: &TabularMdp, r: &RewardVector, v: &DVector<f64>) -> (DVector<f64>, Vec<usize>) {
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let mut best = DVector::from_element(n, f64::NEG_INFINITY);
    let mut actions = vec![0usize; n];
    for a in 0..mdp.n_actions() {
        let q_a = mdp.transition(a) * v * gamma + r.values();
        for s in 0..n {
            if q_a[s] > best[s] {
                best[s] = q_a[s];
                actions[s] = a;
            }
        }
    }
    (best, actions)
}

/// Soft value iteration: `Q(s,a) = r[s] + gamma sum_s' P[s,a,s'] V(s')` with
/// `V(s) = logsumexp_a Q(s,a)`, iterated to sup-norm residual `tol` on `V`.
///
/// The log-sum-exp is computed in shifted form so large reward magnitudes
/// cannot overflow.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    r: &RewardVector,
    tol: f64,
    max_iter: usize,
) -> Result<SoftSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("{tol} must be positive")));
    }
    check_reward(mdp, r)?;
    let n = mdp.n_states();
    let n_act = mdp.n_actions();
    let mut v = DVector::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let q = soft_backup(mdp, r, &v);
        let v_new = logsumexp_rows(&q);
        residual = (&v_new - &v).amax();
        v = v_new;
        if residual <= tol {
            // One more backup so the returned (q, v, policy) are mutually
            // consistent by construction.
            let q = soft_backup(mdp, r, &v);
            let v_final = logsumexp_rows(&q);
            let residual = (&v_final - &v).amax();
            let mut policy = DMatrix::zeros(n, n_act);
            for s in 0..n {
                for a in 0..n_act {
                    policy[(s, a)] = (q[(s, a)] - v_final[s]).exp();
                }
            }
            return Ok(SoftSolution {
                q,
                v: v_final,
                policy,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
        tol,
    })
}

fn soft_backup(mdp: &TabularMdp, r: &RewardVector, v: &DVector<f64>) -> DMatrix<f64> {
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let mut q = DMatrix::zeros(n, mdp.n_actions());
    for a in 0..mdp.n_actions() {
        let q_a = mdp.transition(a) * v * gamma + r.values();
        q.set_column(a, &q_a);
    }
    q
}

fn logsumexp_rows(q: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(q.nrows(), |s, _| {
        let row = q.row(s);
        let m = row.max();
        let sum: f64 = row.iter().map(|x| (x - m).exp()).sum();
        m + sum.ln()
    })
}

fn validate_policy(policy: &DMatrix<f64>, n_states: usize, n_actions: usize) -> Result<()> {
    if policy.nrows() != n_states || policy.ncols() != n_actions {
        return Err(Error::invalid(
            "policy",
            format!(
                "shape {}x{}, expected {}x{}",
                policy.nrows(),
                policy.ncols(),
                n_states,
                n_actions
            ),
        ));
    }
    for s in 0..n_states {
        let sum: f64 = policy.row(s).iter().sum();
        if (sum - 1.0).abs() > 1e-8 || policy.row(s).iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid(
                "policy",
                format!("row {s} sums to {sum} or has negative entries"),
            ));
        }
    }
    Ok(())
}

/// Sample `count` trajectories of exactly `horizon` state-action pairs.
///
/// Starts from `initial_dist`, draws actions from `policy` and successors
/// from the transition model. Bit-reproducible for a fixed seed.
pub fn sample_demonstrations(
    mdp: &TabularMdp,
    policy: &DMatrix<f64>,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<DemonstrationSet> {
    if horizon == 0 || count == 0 {
        return Err(Error::invalid(
            "demonstrations",
            "horizon and count must be at least 1",
        ));
    }
    validate_policy(policy, mdp.n_states(), mdp.n_actions())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let mut traj = Vec::with_capacity(horizon);
        let mut s = sample_index(&mut rng, mdp.initial_dist().iter().copied());
        for t in 0..horizon {
            let a = sample_index(&mut rng, policy.row(s).iter().copied());
            traj.push((s, a));
            if t + 1 < horizon {
                s = sample_index(&mut rng, mdp.transition(a).row(s).iter().copied());
            }
        }
        trajectories.push(traj);
    }
    DemonstrationSet::new(trajectories)
}

fn sample_index(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    let mut idx = 0;
    for (i, p) in probs.enumerate() {
        idx = i;
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding left acc slightly below 1; fall back to the last viable index.
    let _ = idx;
    last_positive
}

/// Expected discounted return of `policy` from the initial distribution,
/// via the linear system `(I - gamma P_pi) v = r`.
pub fn policy_value(mdp: &TabularMdp, r: &RewardVector, policy: &DMatrix<f64>) -> Result<f64> {
    check_reward(mdp, r)?;
    validate_policy(policy, mdp.n_states(), mdp.n_actions())?;
    let v = policy_state_values(mdp, r, policy)?;
    Ok(mdp.initial_dist().dot(&v))
}

/// Per-state values of a stochastic policy.
pub fn policy_state_values(
    mdp: &TabularMdp,
    r: &RewardVector,
    policy: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = mdp.n_states();
    let p_pi = mdp.policy_transition(policy);
    let mut a = -p_pi * mdp.gamma();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    solve_checked(a, r.values().clone(), 1e-8)
}

fn solve_checked(a: DMatrix<f64>, b: DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(&b).ok_or(Error::LinearSolve {
        residual: f64::INFINITY,
        tol,
    })?;
    let residual = (&a * &x - &b).amax() / (1.0 + b.amax());
    if residual > tol {
        return Err(Error::LinearSolve { residual, tol });
    }
    Ok(x)
}

/// Discounted state-occupancy measure of a policy, normalized to sum to 1:
/// `rho = (1 - gamma) (I - gamma P_pi^T)^{-1} mu0`.
pub fn discounted_occupancy(mdp: &TabularMdp, policy: &DMatrix<f64>) -> Result<DVector<f64>> {
    validate_policy(policy, mdp.n_states(), mdp.n_actions())?;
    let n = mdp.n_states();
    let p_pi = mdp.policy_transition(policy);
    let mut a = -p_pi.transpose() * mdp.gamma();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let y = solve_checked(a, mdp.initial_dist().clone(), 1e-8)?;
    Ok(y * (1.0 - mdp.gamma()))
}

/// Expected value difference: the optimal expected return under `r_true`
/// minus the expected return of `policy_hat`, both evaluated under `r_true`.
pub fn expected_value_difference(
    mdp: &TabularMdp,
    r_true: &RewardVector,
    policy_hat: &DMatrix<f64>,
) -> Result<f64> {
    let (_, opt) = hard_value_iteration(mdp, r_true, DEFAULT_TOL, mdp.default_max_iter(DEFAULT_TOL))?;
    let opt_value = policy_value(mdp, r_true, &opt.to_stochastic(mdp.n_actions()))?;
    let hat_value = policy_value(mdp, r_true, policy_hat)?;
    Ok(opt_value - hat_value)
}

// ---------------------------------------------------------------------------
// JSON form: {n_states, n_actions, gamma, transitions[s][a][s'], initial_dist}

#[derive(Serialize, Deserialize)]
struct MdpJson {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transitions: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
}

impl Serialize for TabularMdp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.n_states;
        let transitions = (0..n)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| (0..n).map(|sp| self.transitions[a][(s, sp)]).collect())
                    .collect()
            })
            .collect();
        MdpJson {
            n_states: n,
            n_actions: self.n_actions,
            gamma: self.gamma,
            transitions,
            initial_dist: self.initial_dist.as_slice().to_vec(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TabularMdp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = MdpJson::deserialize(deserializer)?;
        if j.transitions.len() != j.n_states {
            return Err(D::Error::custom("transitions outer length != n_states"));
        }
        let mut per_action = vec![DMatrix::zeros(j.n_states, j.n_states); j.n_actions];
        for (s, row) in j.transitions.iter().enumerate() {
            if row.len() != j.n_actions {
                return Err(D::Error::custom("transitions[s] length != n_actions"));
            }
            for (a, probs) in row.iter().enumerate() {
                if probs.len() != j.n_states {
                    return Err(D::Error::custom("transitions[s][a] length != n_states"));
                }
                for (sp, p) in probs.iter().enumerate() {
                    per_action[a][(s, sp)] = *p;
                }
            }
        }
        TabularMdp::new(per_action, j.gamma, DVector::from_vec(j.initial_dist))
            .map_err(D::Error::custom)
    }
}
