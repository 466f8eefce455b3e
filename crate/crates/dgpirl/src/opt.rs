//! Line-searched quasi-Newton ascent shared by every trainer in the crate.
//!
//! Maximizes `f` with an L-BFGS two-loop direction and a backtracking Armijo
//! line search, optionally inside a coordinate box. Accepted steps never
//! decrease the objective, so the returned trace is non-decreasing.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Maximum accepted iterations.
    pub max_iters: usize,
    /// Stop when the sup-norm of the (bound-projected) gradient drops below this.
    pub grad_tol: f64,
    /// L-BFGS memory length.
    pub memory: usize,
    /// Armijo sufficient-increase constant.
    pub armijo_c1: f64,
    /// Backtracking halvings per line search.
    pub max_line_search: usize,
    /// Consecutive failed line searches tolerated before stopping early.
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 200,
            grad_tol: 1e-6,
            memory: 10,
            armijo_c1: 1e-4,
            max_line_search: 40,
            patience: 3,
        }
    }
}

/// Per-coordinate box; use +/- infinity for unbounded entries.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Bounds {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptOutcome {
    /// Best iterate found.
    pub x: DVector<f64>,
    /// Objective at the best iterate.
    pub value: f64,
    /// Objective values of accepted iterates, starting with the initial one.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// True when the gradient tolerance was reached.
    pub converged: bool,
}

/// Maximize `f`, which returns `(value, gradient)` at a point.
///
/// `deadline`, when given, causes an `Error::Timeout` once exceeded between
/// iterations. Non-finite objective values abort with `Error::Divergence`.
pub fn maximize<F>(
    f: &mut F,
    x0: DVector<f64>,
    bounds: Option<&Bounds>,
    cfg: &OptimizerConfig,
    deadline: Option<(Instant, u64)>,
) -> Result<OptOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let dim = x0.len();
    let mut x = x0;
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let (mut fx, mut gx) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::Divergence {
            msg: format!("objective {fx} at the initial point"),
            trace: vec![],
        });
    }
    let mut trace = vec![fx];
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let mut failures = 0usize;
    let mut iterations = 0usize;

    for _ in 0..cfg.max_iters {
        if let Some((start, budget_ms)) = deadline {
            let elapsed = start.elapsed().as_millis() as u64;
            if elapsed > budget_ms {
                return Err(Error::Timeout {
                    elapsed_ms: elapsed,
                    budget_ms,
                });
            }
        }
        let free_grad = project_gradient(&x, &gx, bounds);
        let gnorm = free_grad.amax();
        if gnorm <= cfg.grad_tol {
            return Ok(OptOutcome {
                x,
                value: fx,
                trace,
                iterations,
                grad_norm: gnorm,
                converged: true,
            });
        }

        // Ascent direction from the two-loop recursion on (s, y) pairs.
        let mut d = two_loop_direction(&gx, &pairs);
        if d.dot(&gx) <= 0.0 {
            // Stale curvature; fall back to steepest ascent.
            pairs.clear();
            d = gx.clone();
        }

        match line_search(f, &x, fx, &gx, &d, bounds, cfg)? {
            Some((x_new, f_new, g_new)) => {
                if !f_new.is_finite() {
                    return Err(Error::Divergence {
                        msg: format!("objective became {f_new}"),
                        trace,
                    });
                }
                let s = &x_new - &x;
                let y = &g_new - &gx;
                let sy = s.dot(&y);
                if sy < -1e-10 * s.norm() * y.norm() {
                    // Negative curvature of the ascent problem: usable pair.
                    if pairs.len() == cfg.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y));
                } else {
                    pairs.clear();
                }
                x = x_new;
                fx = f_new;
                gx = g_new;
                trace.push(fx);
                iterations += 1;
                failures = 0;
            }
            None => {
                failures += 1;
                pairs.clear();
                if failures > cfg.patience {
                    break;
                }
            }
        }
    }

    let gnorm = project_gradient(&x, &gx, bounds).amax();
    let _ = dim;
    Ok(OptOutcome {
        x,
        value: fx,
        trace,
        iterations,
        grad_norm: gnorm,
        converged: false,
    })
}

/// Zero gradient components that point outside the box at an active bound.
fn project_gradient(x: &DVector<f64>, g: &DVector<f64>, bounds: Option<&Bounds>) -> DVector<f64> {
    let mut out = g.clone();
    if let Some(b) = bounds {
        for i in 0..x.len() {
            if (x[i] <= b.lower[i] && g[i] < 0.0) || (x[i] >= b.upper[i] && g[i] > 0.0) {
                out[i] = 0.0;
            }
        }
    }
    out
}

/// Two-loop recursion for an approximate Newton ascent direction `H g`.
///
/// The pairs store `(s, y)` with `y = g_{k+1} - g_k` of the *ascent* gradient,
/// so the usual minimization formulas apply with `y` negated.
fn two_loop_direction(
    g: &DVector<f64>,
    pairs: &VecDeque<(DVector<f64>, DVector<f64>)>,
) -> DVector<f64> {
    if pairs.is_empty() {
        return g.clone();
    }
    // Work on the minimization problem of -f: gradient is -g, y_min = -y.
    let mut q = -g;
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let y_min = -y;
        let rho = 1.0 / s.dot(&y_min);
        let alpha = rho * s.dot(&q);
        q -= y_min * alpha;
        alphas.push((alpha, rho));
    }
    let (s_last, y_last) = pairs.back().unwrap();
    let y_min_last = -y_last;
    let scale = s_last.dot(&y_min_last) / y_min_last.dot(&y_min_last);
    let mut r = q * scale;
    for ((s, y), (alpha, rho)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let y_min = -y;
        let beta = rho * y_min.dot(&r);
        r += s * (alpha - beta);
    }
    // r approximates H^{-1} (-g) for the minimization; ascent direction is -r.
    -r
}

type SearchResult = Option<(DVector<f64>, f64, DVector<f64>)>;

fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    fx: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    bounds: Option<&Bounds>,
    cfg: &OptimizerConfig,
) -> Result<SearchResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut alpha = 1.0;
    for _ in 0..cfg.max_line_search {
        let mut cand = x + d * alpha;
        if let Some(b) = bounds {
            b.project(&mut cand);
        }
        let step = &cand - x;
        if step.amax() == 0.0 {
            return Ok(None);
        }
        // Projected Armijo condition against the step actually taken. A
        // candidate whose evaluation fails (factorization failure, overflow)
        // is treated as insufficient and the step is shortened.
        let slope = g.dot(&step);
        if slope > 0.0 {
            if let Ok((fc, gc)) = f(&cand) {
                if fc.is_finite() && fc >= fx + cfg.armijo_c1 * slope {
                    return Ok(Some((cand, fc, gc)));
                }
            }
        }
        alpha *= 0.5;
    }
    Ok(None)
}
