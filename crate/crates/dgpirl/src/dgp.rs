//! Two-layer deep-GP reward model, its variational evidence lower bound,
//! analytic gradients, training loop and transfer prediction.
//!
//! The top layer maps raw features `X` through a sparse GP (inducing inputs
//! `W`, variational outputs `N(v_m, G_m)`) to latent state features; the
//! bottom layer maps the latent features through a DTC sparse GP (inducing
//! inputs `Z`, outputs `f`) to the reward driving the MaxEnt likelihood.
//! The bound decomposes as
//!
//! `total = L_M + L_G - L_KL + L_B - (n m1 / 2) log(2 pi / lambda)`
//!
//! with `L_M` the demonstration likelihood at the collapsed reward, `L_G`
//! the Gaussian prior on `f`, `L_KL` the divergence from the top-layer
//! variational posterior to its prior, and `L_B` the FITC variance penalty
//! `-(lambda/2) sum_m Tr(Sigma_B + A G_m A')`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpirl::{distinct_row_subset, mat_to_rows, rows_to_mat};
use crate::kernel::{
    chol_jitter, gram_from_sqd, hyper_adjoints, squared_distances, KernelParams, BASE_JITTER,
};
use crate::maxent::{maxent_gradient, maxent_log_likelihood};
use crate::mdp::{soft_value_iteration, DemonstrationSet, RewardVector, TabularMdp};
use crate::opt::{maximize, Bounds, OptimizerConfig};
use crate::sgp::{dtc_backward, dtc_forward, prior_logpdf};

pub const MODEL_VERSION: &str = "dgp-irl/1";
/// Box for the log noise precision, capped at the initial value. The cap
/// matters: the bound's `+(n m1/2) log lambda` constant pays for shrinking
/// the FITC traces through degenerate kernels, so any lambda headroom turns
/// that runaway direction into the global supremum and the demonstration
/// likelihood loses the race.
pub const LOG_LAMBDA_BOUNDS: (f64, f64) = (-10.0, 4.605170185988092);
/// Kernel boxes for both deep layers, tighter than the single-layer
/// baseline's: the trace terms reward extreme amplitude/lengthscale
/// combinations that linearize a layer.
pub const DGP_LOG_AMPLITUDE_BOUNDS: (f64, f64) = (-2.5, 2.5);
pub const DGP_LOG_INV_LENGTHSCALE_BOUNDS: (f64, f64) = (-3.0, 3.0);

/// The deep-GP reward model.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpModel {
    /// Top-layer inducing inputs, `K_w x m0`; a fixed subset of training rows.
    pub w: DMatrix<f64>,
    /// Row indices of `w` within the training feature matrix.
    pub w_indices: Vec<usize>,
    /// Bottom-layer inducing inputs, `K_z x d_in` with
    /// `d_in = m1 (+ m0 when input augmentation is on)`.
    pub z: DMatrix<f64>,
    /// Variational means of the top-layer inducing outputs, `K_w x m1`.
    pub v_tilde: DMatrix<f64>,
    /// Per-dimension Cholesky factors of the variational covariances
    /// `G_m = L_m L_m'`; lower triangular with positive diagonals.
    pub g_chol: Vec<DMatrix<f64>>,
    /// Bottom-layer inducing outputs, length `K_z`.
    pub f_tilde: DVector<f64>,
    /// Top-layer kernel.
    pub kernel_b: KernelParams,
    /// Bottom-layer kernel.
    pub kernel_r: KernelParams,
    /// Log noise precision of the latent layer.
    pub log_lambda: f64,
    /// Latent width.
    pub m1: usize,
    /// Append the raw features to the latent means as bottom-layer input.
    pub augment_input: bool,
}

impl DgpModel {
    pub fn validate(&self) -> Result<()> {
        let k_w = self.w.nrows();
        let k_z = self.z.nrows();
        if self.w_indices.len() != k_w {
            return Err(Error::invalid("dgp model", "w_indices length mismatch"));
        }
        if self.v_tilde.nrows() != k_w || self.v_tilde.ncols() != self.m1 {
            return Err(Error::invalid("dgp model", "v_tilde shape mismatch"));
        }
        if self.g_chol.len() != self.m1 {
            return Err(Error::invalid("dgp model", "g_chol count mismatch"));
        }
        if self.f_tilde.len() != k_z {
            return Err(Error::invalid("dgp model", "f_tilde length mismatch"));
        }
        let d_in = self.m1 + if self.augment_input { self.w.ncols() } else { 0 };
        if self.z.ncols() != d_in {
            return Err(Error::invalid(
                "dgp model",
                format!("z has {} columns, expected {d_in}", self.z.ncols()),
            ));
        }
        for (m, l) in self.g_chol.iter().enumerate() {
            if l.nrows() != k_w || l.ncols() != k_w {
                return Err(Error::invalid("dgp model", format!("g_chol[{m}] shape")));
            }
            for i in 0..k_w {
                if !(l[(i, i)] > 0.0) {
                    return Err(Error::invalid(
                        "dgp model",
                        format!("g_chol[{m}] diagonal entry {i} is not positive"),
                    ));
                }
                for j in (i + 1)..k_w {
                    if l[(i, j)] != 0.0 {
                        return Err(Error::invalid(
                            "dgp model",
                            format!("g_chol[{m}] is not lower triangular"),
                        ));
                    }
                }
            }
        }
        let all_finite = self.w.iter().all(|v| v.is_finite())
            && self.z.iter().all(|v| v.is_finite())
            && self.v_tilde.iter().all(|v| v.is_finite())
            && self.f_tilde.iter().all(|v| v.is_finite())
            && self.g_chol.iter().all(|l| l.iter().all(|v| v.is_finite()))
            && self.log_lambda.is_finite();
        if !all_finite {
            return Err(Error::invalid("dgp model", "non-finite entries"));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    fn d_in(&self) -> usize {
        self.m1 + if self.augment_input { self.w.ncols() } else { 0 }
    }
}

/// The bound and its additive terms; `total` is exactly their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub l_m: f64,
    pub l_g: f64,
    pub l_kl: f64,
    pub l_b: f64,
    pub constant: f64,
    pub total: f64,
}

/// Gradients mirroring every trainable field of [`DgpModel`] (`w` is fixed).
/// Cholesky-factor gradients are with respect to the raw lower-triangular
/// entries.
#[derive(Debug, Clone)]
pub struct DgpGrads {
    pub f_tilde: DVector<f64>,
    pub v_tilde: DMatrix<f64>,
    pub g_chol: Vec<DMatrix<f64>>,
    pub z: DMatrix<f64>,
    pub kernel_b: (f64, f64),
    pub kernel_r: (f64, f64),
    pub log_lambda: f64,
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    out
}

/// Latent means `D = K_xW K_WW^{-1} V`; with input augmentation on, the raw
/// features are appended as extra columns.
pub fn latent_means(model: &DgpModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.validate()?;
    if x.ncols() != model.w.ncols() {
        return Err(Error::invalid("features", "column count mismatch with w"));
    }
    let kww = gram_from_sqd(&model.kernel_b, &squared_distances(&model.w, &model.w));
    let chol_w = chol_jitter(&kww, BASE_JITTER)?;
    let k_xw = gram_from_sqd(&model.kernel_b, &squared_distances(x, &model.w));
    let a_b = chol_w.solve_mat(&k_xw.transpose()).transpose();
    let d = &a_b * &model.v_tilde;
    Ok(if model.augment_input {
        hcat(&d, x)
    } else {
        d
    })
}

/// DTC reward mean at latent rows: `r = K_DZ K_ZZ^{-1} f`.
pub fn reward_from_latent(model: &DgpModel, d_tilde: &DMatrix<f64>) -> Result<RewardVector> {
    if d_tilde.ncols() != model.z.ncols() {
        return Err(Error::invalid(
            "latent input",
            format!(
                "{} columns vs z's {}",
                d_tilde.ncols(),
                model.z.ncols()
            ),
        ));
    }
    let head = dtc_forward(
        &model.kernel_r,
        d_tilde,
        &model.z,
        &model.f_tilde,
        BASE_JITTER,
    )?;
    RewardVector::new(head.reward)
}

/// Reward prediction for new states: the same latent-then-reward path used
/// in training, applied to fresh features.
pub fn transfer_predict(model: &DgpModel, x_star: &DMatrix<f64>) -> Result<RewardVector> {
    let d_star = latent_means(model, x_star)?;
    reward_from_latent(model, &d_star)
}

/// Evidence lower bound at the current parameters.
pub fn elbo(
    model: &DgpModel,
    x: &DMatrix<f64>,
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    inner_tol: f64,
) -> Result<ElboBreakdown> {
    Ok(eval_elbo(model, x, demos, mdp, inner_tol, false)?.0)
}

/// Evidence lower bound plus full analytic gradients.
pub fn elbo_gradients(
    model: &DgpModel,
    x: &DMatrix<f64>,
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    inner_tol: f64,
) -> Result<(ElboBreakdown, DgpGrads)> {
    let (b, g) = eval_elbo(model, x, demos, mdp, inner_tol, true)?;
    Ok((b, g.expect("gradients requested")))
}

fn eval_elbo(
    model: &DgpModel,
    x: &DMatrix<f64>,
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    inner_tol: f64,
    want_grads: bool,
) -> Result<(ElboBreakdown, Option<DgpGrads>)> {
    model.validate()?;
    let n = x.nrows();
    if n != mdp.n_states() {
        return Err(Error::invalid("features", "row count != n_states"));
    }
    demos.validate(mdp.n_states(), mdp.n_actions())?;
    let m1 = model.m1;
    let k_w = model.w.nrows();
    let lambda = model.lambda();

    // Top layer.
    let sqd_ww = squared_distances(&model.w, &model.w);
    let kww_raw = gram_from_sqd(&model.kernel_b, &sqd_ww);
    let chol_w = chol_jitter(&kww_raw, BASE_JITTER)?;
    let sqd_xw = squared_distances(x, &model.w);
    let k_xw = gram_from_sqd(&model.kernel_b, &sqd_xw);
    let a_b = chol_w.solve_mat(&k_xw.transpose()).transpose();
    let d_tilde = &a_b * &model.v_tilde;
    let d_in = if model.augment_input {
        hcat(&d_tilde, x)
    } else {
        d_tilde.clone()
    };

    // Bottom layer and likelihood.
    let head = dtc_forward(
        &model.kernel_r,
        &d_in,
        &model.z,
        &model.f_tilde,
        BASE_JITTER,
    )?;
    let r = RewardVector::new(head.reward.clone())?;
    let soft = soft_value_iteration(mdp, &r, inner_tol, mdp.default_max_iter(inner_tol))?;
    let l_m = maxent_log_likelihood(demos, mdp, &soft);
    let l_g = prior_logpdf(&head, &model.f_tilde);

    // KL term.
    let kww_inv = chol_w.inverse();
    let logdet_w = chol_w.log_det();
    let mut l_kl = 0.0;
    let mut g_mats = Vec::with_capacity(m1);
    for m in 0..m1 {
        let l = &model.g_chol[m];
        let g = l * l.transpose();
        let tr: f64 = kww_inv.component_mul(&g).sum();
        let v_m = model.v_tilde.column(m);
        let quad = v_m.dot(&(&kww_inv * v_m));
        let logdet_g = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        l_kl += 0.5 * (tr + quad - k_w as f64 + logdet_w - logdet_g);
        g_mats.push(g);
    }

    // FITC variance penalty, per row (the full n x n K_xx is never formed).
    let sigma_b_sq = model.kernel_b.amplitude_sq();
    let mut q_trace = 0.0;
    for i in 0..n {
        for j in 0..k_w {
            q_trace += a_b[(i, j)] * k_xw[(i, j)];
        }
    }
    let trace_sb = n as f64 * sigma_b_sq - q_trace;
    let mut t3_sum = 0.0;
    let mut al_mats = Vec::with_capacity(m1);
    for m in 0..m1 {
        let al = &a_b * &model.g_chol[m];
        t3_sum += al.iter().map(|v| v * v).sum::<f64>();
        al_mats.push(al);
    }
    let l_b = -0.5 * lambda * (m1 as f64 * trace_sb + t3_sum);

    let constant =
        -(n as f64 * m1 as f64 / 2.0) * ((2.0 * std::f64::consts::PI).ln() - model.log_lambda);
    let total = l_m + l_g - l_kl + l_b + constant;
    let breakdown = ElboBreakdown {
        l_m,
        l_g,
        l_kl,
        l_b,
        constant,
        total,
    };
    if !want_grads {
        return Ok((breakdown, None));
    }

    // ----- gradients -----
    let g_r = maxent_gradient(demos, mdp, &soft)?;
    let back = dtc_backward(&head, &model.kernel_r, &d_in, &model.z, &g_r, true);
    let s_d = if model.augment_input {
        back.grad_inputs.columns(0, m1).into_owned()
    } else {
        back.grad_inputs.clone()
    };

    // v: likelihood path through D = A_b V, plus the KL quadratic.
    let grad_v = a_b.tr_mul(&s_d) - &kww_inv * &model.v_tilde;

    // Adjoint of A_b collected over every path that uses it.
    let g_sum = {
        let mut s = DMatrix::zeros(k_w, k_w);
        for g in &g_mats {
            s += g;
        }
        s
    };
    let s_ab = &s_d * model.v_tilde.transpose() - (&a_b * &g_sum) * lambda
        + &k_xw * (lambda * m1 as f64 / 2.0);

    // Direct K_xW path of the variance penalty, then the A_b = K_xW Kw^{-1}
    // propagation into K_xW and K_WW.
    let s_xw = &a_b * (lambda * m1 as f64 / 2.0) + &s_ab * &kww_inv;
    let mut s_ww = -a_b.tr_mul(&s_ab) * &kww_inv;

    // KL path into K_WW: 1/2 sum_m Kw^{-1} (G_m + v v') Kw^{-1} - (m1/2) Kw^{-1}.
    for m in 0..m1 {
        let v_m = model.v_tilde.column(m).clone_owned();
        let kv = &kww_inv * &v_m;
        let kg = &kww_inv * &g_mats[m] * &kww_inv;
        s_ww += kg * 0.5 + &kv * kv.transpose() * 0.5;
    }
    s_ww -= &kww_inv * (m1 as f64 / 2.0);

    let (amp_xw, xi_xw) = hyper_adjoints(&model.kernel_b, &sqd_xw, &k_xw, &s_xw);
    let (amp_ww, xi_ww) = hyper_adjoints(&model.kernel_b, &sqd_ww, &kww_raw, &s_ww);
    // k_b(x_i, x_i) = sigma_b^2 appears only through Tr(Sigma_B).
    let amp_direct = -lambda * m1 as f64 * n as f64 * sigma_b_sq;
    let kernel_b_grad = (amp_xw + amp_ww + amp_direct, xi_xw + xi_ww);

    // Cholesky-factor gradients: S_G = d total / d G_m, then (S + S') L,
    // restricted to the lower triangle.
    let ata = a_b.tr_mul(&a_b);
    let eye = DMatrix::identity(k_w, k_w);
    let mut g_chol_grads = Vec::with_capacity(m1);
    for m in 0..m1 {
        let l = &model.g_chol[m];
        let linv = l
            .solve_lower_triangular(&eye)
            .expect("positive diagonal");
        let g_inv = linv.transpose() * &linv;
        let s_g = (&g_inv - &kww_inv) * 0.5 - &ata * (0.5 * lambda);
        let mut grad_l = (&s_g + s_g.transpose()) * l;
        for i in 0..k_w {
            for j in (i + 1)..k_w {
                grad_l[(i, j)] = 0.0;
            }
        }
        g_chol_grads.push(grad_l);
    }

    let grads = DgpGrads {
        f_tilde: back.grad_f,
        v_tilde: grad_v,
        g_chol: g_chol_grads,
        z: back.grad_z,
        kernel_b: kernel_b_grad,
        kernel_r: (back.grad_log_amplitude, back.grad_log_inv_lengthscale),
        log_lambda: l_b + n as f64 * m1 as f64 / 2.0,
    };
    Ok((breakdown, Some(grads)))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone)]
pub struct DgpConfig {
    /// Latent width; `None` means `min(m0, 4)`.
    pub m1: Option<usize>,
    /// Top-layer inducing count; `None` means `min(64, n/4)`.
    pub k_w: Option<usize>,
    /// Bottom-layer inducing count; `None` means `min(64, n/4)`.
    pub k_z: Option<usize>,
    pub augment_input: bool,
    /// Keep the top-layer kernel at its initial shape instead of learning
    /// it. On coarse feature spaces the variance penalty otherwise drags
    /// the inverse lengthscale to its box floor, flattening the latent map.
    pub freeze_kernel_b: bool,
    pub seed: u64,
    pub opt: OptimizerConfig,
    /// Iterations spent on the variational and inducing parameters before
    /// the kernels and lambda are released. Without the warm-up, greedy
    /// ascent tends to collapse a kernel (gaming the prior determinant or
    /// the FITC trace) before the likelihood basin is established.
    pub warmup_iters: usize,
    pub inner_tol: f64,
    /// Optional wall-clock budget in milliseconds.
    pub budget_ms: Option<u64>,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            m1: None,
            k_w: None,
            k_z: None,
            augment_input: false,
            freeze_kernel_b: false,
            seed: 0,
            opt: OptimizerConfig::default(),
            warmup_iters: 60,
            inner_tol: 1e-10,
            budget_ms: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgpTrained {
    pub model: DgpModel,
    pub breakdown: ElboBreakdown,
    /// Accepted ELBO totals, non-decreasing.
    pub trace: Vec<f64>,
}

/// Whitened principal-component scores of `x`, `n x m1` (zero-padded when
/// `m1` exceeds the feature rank).
fn pca_scores(x: &DMatrix<f64>, m1: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let mu = x.row_mean();
    let mut xc = x.clone();
    for i in 0..n {
        for j in 0..x.ncols() {
            xc[(i, j)] -= mu[j];
        }
    }
    let svd = xc.clone().svd(false, true);
    let v_t = svd.v_t.expect("thin SVD with V requested");
    let mut scores = DMatrix::zeros(n, m1);
    let rank = svd.singular_values.len().min(m1);
    for k in 0..rank {
        let sv = svd.singular_values[k];
        let comp_std = sv / ((n.max(2) - 1) as f64).sqrt();
        if comp_std > 1e-12 {
            for i in 0..n {
                let mut t = 0.0;
                for j in 0..x.ncols() {
                    t += xc[(i, j)] * v_t[(k, j)];
                }
                scores[(i, k)] = t / comp_std;
            }
        }
    }
    scores
}

/// Parameter packing for the optimizer. Layout:
/// `[f | v (by latent dim) | L factors (packed lower, log diagonal) | z
/// (row-major) | log s_b, log xi_b, log s_r, log xi_r, log lambda]`.
struct Packing {
    k_w: usize,
    k_z: usize,
    m1: usize,
    d_in: usize,
}

impl Packing {
    fn dim(&self) -> usize {
        self.k_z
            + self.k_w * self.m1
            + self.m1 * self.k_w * (self.k_w + 1) / 2
            + self.k_z * self.d_in
            + 5
    }

    fn pack(&self, model: &DgpModel) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        let mut idx = 0;
        for i in 0..self.k_z {
            v[idx] = model.f_tilde[i];
            idx += 1;
        }
        for m in 0..self.m1 {
            for i in 0..self.k_w {
                v[idx] = model.v_tilde[(i, m)];
                idx += 1;
            }
        }
        for m in 0..self.m1 {
            let l = &model.g_chol[m];
            for i in 0..self.k_w {
                for j in 0..=i {
                    v[idx] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
                    idx += 1;
                }
            }
        }
        for i in 0..self.k_z {
            for j in 0..self.d_in {
                v[idx] = model.z[(i, j)];
                idx += 1;
            }
        }
        v[idx] = model.kernel_b.log_amplitude;
        v[idx + 1] = model.kernel_b.log_inv_lengthscale;
        v[idx + 2] = model.kernel_r.log_amplitude;
        v[idx + 3] = model.kernel_r.log_inv_lengthscale;
        v[idx + 4] = model.log_lambda;
        v
    }

    fn unpack(&self, v: &DVector<f64>, template: &DgpModel) -> DgpModel {
        let mut model = template.clone();
        let mut idx = 0;
        for i in 0..self.k_z {
            model.f_tilde[i] = v[idx];
            idx += 1;
        }
        for m in 0..self.m1 {
            for i in 0..self.k_w {
                model.v_tilde[(i, m)] = v[idx];
                idx += 1;
            }
        }
        for m in 0..self.m1 {
            let l = &mut model.g_chol[m];
            for i in 0..self.k_w {
                for j in 0..=i {
                    l[(i, j)] = if i == j { v[idx].exp() } else { v[idx] };
                    idx += 1;
                }
            }
        }
        for i in 0..self.k_z {
            for j in 0..self.d_in {
                model.z[(i, j)] = v[idx];
                idx += 1;
            }
        }
        model.kernel_b = KernelParams {
            log_amplitude: v[idx],
            log_inv_lengthscale: v[idx + 1],
        };
        model.kernel_r = KernelParams {
            log_amplitude: v[idx + 2],
            log_inv_lengthscale: v[idx + 3],
        };
        model.log_lambda = v[idx + 4];
        model
    }

    /// Chain the raw-entry gradients into the packed space (log diagonals).
    fn pack_grads(&self, grads: &DgpGrads, model: &DgpModel) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        let mut idx = 0;
        for i in 0..self.k_z {
            v[idx] = grads.f_tilde[i];
            idx += 1;
        }
        for m in 0..self.m1 {
            for i in 0..self.k_w {
                v[idx] = grads.v_tilde[(i, m)];
                idx += 1;
            }
        }
        for m in 0..self.m1 {
            let gl = &grads.g_chol[m];
            let l = &model.g_chol[m];
            for i in 0..self.k_w {
                for j in 0..=i {
                    v[idx] = if i == j {
                        gl[(i, i)] * l[(i, i)]
                    } else {
                        gl[(i, j)]
                    };
                    idx += 1;
                }
            }
        }
        for i in 0..self.k_z {
            for j in 0..self.d_in {
                v[idx] = grads.z[(i, j)];
                idx += 1;
            }
        }
        v[idx] = grads.kernel_b.0;
        v[idx + 1] = grads.kernel_b.1;
        v[idx + 2] = grads.kernel_r.0;
        v[idx + 3] = grads.kernel_r.1;
        v[idx + 4] = grads.log_lambda;
        v
    }

    fn bounds(&self) -> Bounds {
        let mut b = Bounds::unbounded(self.dim());
        // Log diagonals of the variational factors: keep exp() away from
        // underflow so unpacked models stay valid.
        let mut idx = self.k_z + self.k_w * self.m1;
        for _ in 0..self.m1 {
            for i in 0..self.k_w {
                for j in 0..=i {
                    if i == j {
                        b.lower[idx] = -20.0;
                        b.upper[idx] = 20.0;
                    }
                    idx += 1;
                }
            }
        }
        let base = self.dim() - 5;
        // The top-layer amplitude is not identifiable: the latent means are
        // invariant to it and only the variance penalty and KL see it, which
        // turns it into a pure rescaling trough. Pin it at its initial 1.
        b.lower[base] = 0.0;
        b.upper[base] = 0.0;
        b.lower[base + 1] = DGP_LOG_INV_LENGTHSCALE_BOUNDS.0;
        b.upper[base + 1] = DGP_LOG_INV_LENGTHSCALE_BOUNDS.1;
        b.lower[base + 2] = DGP_LOG_AMPLITUDE_BOUNDS.0;
        b.upper[base + 2] = DGP_LOG_AMPLITUDE_BOUNDS.1;
        b.lower[base + 3] = DGP_LOG_INV_LENGTHSCALE_BOUNDS.0;
        b.upper[base + 3] = DGP_LOG_INV_LENGTHSCALE_BOUNDS.1;
        b.lower[base + 4] = LOG_LAMBDA_BOUNDS.0;
        b.upper[base + 4] = LOG_LAMBDA_BOUNDS.1;
        b
    }
}

/// Build the initial model: `z ~ U(-1, 1)`, `w` a random subset of distinct
/// feature rows, `v` the whitened PCA scores at those rows, `L_m` the factor
/// of `K_WW` (so the KL starts at its `v`-driven minimum), `f = 0`,
/// `lambda = 100`, kernels at log 0.
pub fn init_model(x: &DMatrix<f64>, cfg: &DgpConfig) -> Result<DgpModel> {
    let n = x.nrows();
    let m0 = x.ncols();
    let m1 = cfg.m1.unwrap_or_else(|| m0.min(4)).max(1);
    let k_w_req = cfg.k_w.unwrap_or_else(|| (n / 4).clamp(1, 64));
    let k_z = cfg.k_z.unwrap_or_else(|| (n / 4).clamp(1, 64)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d_in = m1 + if cfg.augment_input { m0 } else { 0 };
    let z = DMatrix::from_fn(k_z, d_in, |_, _| rng.gen_range(-1.0..1.0));
    let (w, w_indices) = distinct_row_subset(x, k_w_req, &mut rng);
    let k_w = w.nrows();
    if k_w == 0 {
        return Err(Error::invalid("features", "no distinct rows available"));
    }
    let scores = pca_scores(x, m1);
    let v_tilde = DMatrix::from_fn(k_w, m1, |i, m| scores[(w_indices[i], m)]);
    let kernel_b = KernelParams::default();
    let kww = gram_from_sqd(&kernel_b, &squared_distances(&w, &w));
    let l0 = chol_jitter(&kww, BASE_JITTER)?.lower().clone();
    let model = DgpModel {
        w,
        w_indices,
        z,
        v_tilde,
        g_chol: vec![l0; m1],
        f_tilde: DVector::zeros(k_z),
        kernel_b,
        kernel_r: KernelParams::default(),
        log_lambda: 100f64.ln(),
        m1,
        augment_input: cfg.augment_input,
    };
    model.validate()?;
    Ok(model)
}

/// Gradient-based maximization of the bound over
/// `{f, v, L_m, z, theta_b, theta_r, log lambda}`; `w` stays fixed.
pub fn train(
    x: &DMatrix<f64>,
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    cfg: &DgpConfig,
) -> Result<DgpTrained> {
    if x.nrows() != mdp.n_states() {
        return Err(Error::invalid("features", "row count != n_states"));
    }
    let init = init_model(x, cfg)?;
    let packing = Packing {
        k_w: init.w.nrows(),
        k_z: init.z.nrows(),
        m1: init.m1,
        d_in: init.d_in(),
    };
    let mut bounds = packing.bounds();
    if cfg.freeze_kernel_b {
        let i = packing.dim() - 4; // log inverse lengthscale of the top layer
        bounds.lower[i] = init.kernel_b.log_inv_lengthscale;
        bounds.upper[i] = init.kernel_b.log_inv_lengthscale;
    }
    let template = init.clone();
    let mut objective = |v: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let model = packing.unpack(v, &template);
        let (breakdown, grads) = elbo_gradients(&model, x, demos, mdp, cfg.inner_tol)?;
        Ok((breakdown.total, packing.pack_grads(&grads, &model)))
    };
    let deadline = cfg.budget_ms.map(|ms| (std::time::Instant::now(), ms));

    let mut x_cur = packing.pack(&init);
    let mut trace: Vec<f64> = Vec::new();
    let mut extend = |trace: &mut Vec<f64>, out_trace: Vec<f64>| {
        if trace.is_empty() {
            *trace = out_trace;
        } else {
            // Each phase resumes from the previous iterate, so the
            // concatenation stays non-decreasing; drop the duplicated
            // junction value.
            trace.extend(out_trace.into_iter().skip(1));
        }
    };
    let base = packing.dim() - 5;
    let warmup = cfg.warmup_iters.min(cfg.opt.max_iters);
    if warmup > 0 {
        // Phase 1: variational and inducing parameters at frozen
        // hyperparameters.
        let mut frozen = bounds.clone();
        for i in base..packing.dim() {
            frozen.lower[i] = x_cur[i];
            frozen.upper[i] = x_cur[i];
        }
        let cfg1 = OptimizerConfig {
            max_iters: warmup,
            ..cfg.opt.clone()
        };
        let out = maximize(&mut objective, x_cur, Some(&frozen), &cfg1, deadline)?;
        x_cur = out.x;
        extend(&mut trace, out.trace);

        // Phase 2: lambda alone. Its partial derivative at the high initial
        // precision dwarfs every other block; descending this concave 1-D
        // canyon separately keeps the first joint steps from dragging the
        // variational parameters through it.
        let mut lambda_only = bounds.clone();
        for i in 0..packing.dim() {
            if i != base + 4 {
                lambda_only.lower[i] = x_cur[i];
                lambda_only.upper[i] = x_cur[i];
            }
        }
        let cfg2 = OptimizerConfig {
            max_iters: 20,
            ..cfg.opt.clone()
        };
        let out = maximize(&mut objective, x_cur, Some(&lambda_only), &cfg2, deadline)?;
        x_cur = out.x;
        extend(&mut trace, out.trace);
    }
    // Phase 3: everything jointly.
    let cfg3 = OptimizerConfig {
        max_iters: cfg.opt.max_iters - warmup,
        ..cfg.opt.clone()
    };
    let out = maximize(&mut objective, x_cur, Some(&bounds), &cfg3, deadline)?;
    extend(&mut trace, out.trace);
    let model = packing.unpack(&out.x, &template);
    let breakdown = elbo(&model, x, demos, mdp, cfg.inner_tol)?;
    Ok(DgpTrained {
        model,
        breakdown,
        trace,
    })
}

// ---------------------------------------------------------------------------
// JSON form, version tag "dgp-irl/1"; matrices row-major nested arrays.

#[derive(Serialize, Deserialize)]
struct DgpJson {
    version: String,
    w: Vec<Vec<f64>>,
    w_indices: Vec<usize>,
    z: Vec<Vec<f64>>,
    v_tilde: Vec<Vec<f64>>,
    g_chol: Vec<Vec<Vec<f64>>>,
    f_tilde: Vec<f64>,
    kernel_b: KernelParams,
    kernel_r: KernelParams,
    log_lambda: f64,
    m1: usize,
    augment_input: bool,
}

impl Serialize for DgpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DgpJson {
            version: MODEL_VERSION.to_string(),
            w: mat_to_rows(&self.w),
            w_indices: self.w_indices.clone(),
            z: mat_to_rows(&self.z),
            v_tilde: mat_to_rows(&self.v_tilde),
            g_chol: self.g_chol.iter().map(mat_to_rows).collect(),
            f_tilde: self.f_tilde.as_slice().to_vec(),
            kernel_b: self.kernel_b,
            kernel_r: self.kernel_r,
            log_lambda: self.log_lambda,
            m1: self.m1,
            augment_input: self.augment_input,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DgpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = DgpJson::deserialize(d)?;
        if j.version != MODEL_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported model version {:?}, expected {MODEL_VERSION:?}",
                j.version
            )));
        }
        let model = DgpModel {
            w: rows_to_mat(&j.w).map_err(D::Error::custom)?,
            w_indices: j.w_indices,
            z: rows_to_mat(&j.z).map_err(D::Error::custom)?,
            v_tilde: rows_to_mat(&j.v_tilde).map_err(D::Error::custom)?,
            g_chol: j
                .g_chol
                .iter()
                .map(|m| rows_to_mat(m))
                .collect::<Result<Vec<_>>>()
                .map_err(D::Error::custom)?,
            f_tilde: DVector::from_vec(j.f_tilde),
            kernel_b: j.kernel_b,
            kernel_r: j.kernel_r,
            log_lambda: j.log_lambda,
            m1: j.m1,
            augment_input: j.augment_input,
        };
        model.validate().map_err(D::Error::custom)?;
        Ok(model)
    }
}
