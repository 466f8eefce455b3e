//! RBF covariance functions, Gram matrices, their derivatives with respect
//! to hyperparameters and inputs, and jittered Cholesky machinery shared by
//! both GP layers.
//!
//! The kernel is `k(a, b) = s^2 exp(-xi/2 ||a - b||^2)` with amplitude
//! `s = exp(log_amplitude)` and inverse squared lengthscale
//! `xi = exp(log_inv_lengthscale)`. Hyperparameters live in log space so
//! optimizers never have to project onto the positive orthant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative jitter for Cholesky factorizations of Gram matrices.
///
/// Small enough that DTC interpolation at the inducing points stays within
/// 1e-8; the escalation in [`chol_jitter`] covers rank-deficient cases.
pub const BASE_JITTER: f64 = 1e-10;

/// RBF hyperparameters in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_amplitude: f64,
    pub log_inv_lengthscale: f64,
}

impl KernelParams {
    pub fn new(log_amplitude: f64, log_inv_lengthscale: f64) -> Result<Self> {
        if !log_amplitude.is_finite() || !log_inv_lengthscale.is_finite() {
            return Err(Error::invalid(
                "kernel params",
                format!("non-finite log parameters ({log_amplitude}, {log_inv_lengthscale})"),
            ));
        }
        Ok(KernelParams {
            log_amplitude,
            log_inv_lengthscale,
        })
    }

    /// Squared amplitude `s^2`.
    pub fn amplitude_sq(&self) -> f64 {
        (2.0 * self.log_amplitude).exp()
    }

    /// Inverse squared lengthscale `xi`.
    pub fn inv_lengthscale(&self) -> f64 {
        self.log_inv_lengthscale.exp()
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            log_amplitude: 0.0,
            log_inv_lengthscale: 0.0,
        }
    }
}

/// Pairwise squared Euclidean distances between rows of `a` and rows of `b`.
///
/// Computed entrywise from the differences so that identical rows give an
/// exact zero and `squared_distances(a, b)` is exactly the transpose of
/// `squared_distances(b, a)`.
pub fn squared_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(
        a.ncols(),
        b.ncols(),
        "inputs must share a column count ({} vs {})",
        a.ncols(),
        b.ncols()
    );
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let mut s = 0.0;
            for d in 0..a.ncols() {
                let t = a[(i, d)] - b[(j, d)];
                s += t * t;
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Gram matrix from precomputed squared distances.
pub fn gram_from_sqd(params: &KernelParams, sqd: &DMatrix<f64>) -> DMatrix<f64> {
    let s2 = params.amplitude_sq();
    let xi = params.inv_lengthscale();
    sqd.map(|d| s2 * (-0.5 * xi * d).exp())
}

/// Gram matrix between rows of `a` and rows of `b`.
pub fn gram(params: &KernelParams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    gram_from_sqd(params, &squared_distances(a, b))
}

/// Analytic hyperparameter derivatives of a Gram matrix.
#[derive(Debug, Clone)]
pub struct GramGrads {
    /// dK/d(log amplitude) = 2 K.
    pub d_log_amplitude: DMatrix<f64>,
    /// dK/d(log inv lengthscale) = -(xi/2) * sqd .* K.
    pub d_log_inv_lengthscale: DMatrix<f64>,
}

/// Gram matrix together with its hyperparameter derivatives.
pub fn gram_grads(
    params: &KernelParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> (DMatrix<f64>, GramGrads) {
    let sqd = squared_distances(a, b);
    let k = gram_from_sqd(params, &sqd);
    let grads = hyper_grads_from_sqd(params, &sqd, &k);
    (k, grads)
}

/// Hyperparameter derivatives from a precomputed Gram matrix and distances.
pub fn hyper_grads_from_sqd(
    params: &KernelParams,
    sqd: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> GramGrads {
    let xi = params.inv_lengthscale();
    GramGrads {
        d_log_amplitude: k * 2.0,
        d_log_inv_lengthscale: DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
            -0.5 * xi * sqd[(i, j)] * k[(i, j)]
        }),
    }
}

/// Contract an adjoint `dL/dK` with the hyperparameter derivatives of
/// `K = gram(params, ., .)`, returning `(dL/d log_amplitude,
/// dL/d log_inv_lengthscale)`.
pub fn hyper_adjoints(
    params: &KernelParams,
    sqd: &DMatrix<f64>,
    k: &DMatrix<f64>,
    adjoint: &DMatrix<f64>,
) -> (f64, f64) {
    let xi = params.inv_lengthscale();
    let mut d_amp = 0.0;
    let mut d_xi = 0.0;
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            let s = adjoint[(i, j)];
            let kk = k[(i, j)];
            d_amp += s * 2.0 * kk;
            d_xi += s * (-0.5 * xi * sqd[(i, j)]) * kk;
        }
    }
    (d_amp, d_xi)
}

/// Backpropagate an adjoint `S = dL/dK` for `K = gram(params, a, b)` to the
/// inputs, returning `(dL/da, dL/db)`.
///
/// When `a` and `b` are the same matrix (e.g. `K_ZZ = gram(z, z)`), call this
/// once and add both returned blocks to the gradient of that matrix.
pub fn input_adjoints(
    params: &KernelParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    adjoint: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let xi = params.inv_lengthscale();
    let m = adjoint.component_mul(k); // S .* K
    let row_sums = m.column_sum(); // len a.nrows(): sum_j m[i,j]
    let col_sums = m.row_sum(); // len b.nrows(): sum_i m[i,j]
    let mb = &m * b; // a.nrows() x d
    let mta = m.tr_mul(a); // b.nrows() x d
    let d = a.ncols();
    let mut da = DMatrix::zeros(a.nrows(), d);
    for i in 0..a.nrows() {
        for c in 0..d {
            da[(i, c)] = -xi * (row_sums[i] * a[(i, c)] - mb[(i, c)]);
        }
    }
    let mut db = DMatrix::zeros(b.nrows(), d);
    for j in 0..b.nrows() {
        for c in 0..d {
            db[(j, c)] = xi * (mta[(j, c)] - col_sums[j] * b[(j, c)]);
        }
    }
    (da, db)
}

/// Lower-triangular Cholesky factor of a jittered symmetric matrix.
#[derive(Debug, Clone)]
pub struct CholFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl CholFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solve `(L L^T) x = b` for a vector.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("triangular solve with positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("triangular solve with positive diagonal")
    }

    /// Solve `(L L^T) X = B` for a matrix.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("triangular solve with positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("triangular solve with positive diagonal")
    }

    /// log determinant of the factored (jittered) matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Explicit inverse of the factored (jittered) matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Cholesky factorization with escalating jitter.
///
/// Jitter starts at `base_jitter * mean(diag)` and multiplies by 10 on each
/// failure, for at most 6 attempts. The jitter that succeeded is recorded so
/// downstream log-densities stay consistent with the factor actually used.
pub fn chol_jitter(k: &DMatrix<f64>, base_jitter: f64) -> Result<CholFactor> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::invalid(
            "cholesky input",
            format!("matrix is {}x{}, expected square", n, k.ncols()),
        ));
    }
    let scale = 1.0 + k.amax();
    for i in 0..n {
        for j in 0..i {
            if (k[(i, j)] - k[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(
                    "cholesky input",
                    format!(
                        "asymmetry {:.3e} at ({i},{j}) exceeds 1e-10",
                        (k[(i, j)] - k[(j, i)]).abs()
                    ),
                ));
            }
        }
    }
    let mean_diag = k.diagonal().mean();
    let mut jitter = if mean_diag > 0.0 {
        base_jitter * mean_diag
    } else {
        base_jitter
    };
    let attempts = 6;
    for _ in 0..attempts {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = nalgebra::Cholesky::new(kj) {
            return Ok(CholFactor {
                lower: ch.unpack(),
                jitter_used: jitter,
            });
        }
        jitter *= 10.0;
    }
    Err(Error::CholeskyFailure {
        attempts,
        min_eig_estimate: gershgorin_min(k),
    })
}

/// Gershgorin lower bound on the smallest eigenvalue of a symmetric matrix.
fn gershgorin_min(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let mut radius = 0.0;
        for j in 0..n {
            if j != i {
                radius += k[(i, j)].abs();
            }
        }
        best = best.min(k[(i, i)] - radius);
    }
    best
}
