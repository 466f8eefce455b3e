//! Shared sparse-GP machinery: the DTC predictive mean `r = K_xZ K_ZZ^{-1} f`
//! and its reverse-mode derivatives. Used as the reward head of both the
//! single-layer model and the bottom layer of the deep model.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernel::{
    chol_jitter, gram_from_sqd, hyper_adjoints, input_adjoints, squared_distances, CholFactor,
    KernelParams,
};

/// Forward pass of the DTC head.
pub(crate) struct DtcHead {
    pub k_in_z: DMatrix<f64>,
    pub kzz_raw: DMatrix<f64>,
    pub sqd_in_z: DMatrix<f64>,
    pub sqd_zz: DMatrix<f64>,
    pub chol: CholFactor,
    /// `K_ZZ^{-1} f`.
    pub alpha: DVector<f64>,
    /// `K_inZ K_ZZ^{-1}`.
    pub a_mat: DMatrix<f64>,
    /// Predictive mean at the inputs.
    pub reward: DVector<f64>,
}

pub(crate) fn dtc_forward(
    params: &KernelParams,
    inputs: &DMatrix<f64>,
    z: &DMatrix<f64>,
    f: &DVector<f64>,
    base_jitter: f64,
) -> Result<DtcHead> {
    let sqd_in_z = squared_distances(inputs, z);
    let k_in_z = gram_from_sqd(params, &sqd_in_z);
    let sqd_zz = squared_distances(z, z);
    let kzz_raw = gram_from_sqd(params, &sqd_zz);
    let chol = chol_jitter(&kzz_raw, base_jitter)?;
    let alpha = chol.solve_vec(f);
    let a_mat = chol.solve_mat(&k_in_z.transpose()).transpose();
    let reward = &k_in_z * &alpha;
    Ok(DtcHead {
        k_in_z,
        kzz_raw,
        sqd_in_z,
        sqd_zz,
        chol,
        alpha,
        a_mat,
        reward,
    })
}

/// `log N(f | 0, K_ZZ + jitter I)`.
pub(crate) fn prior_logpdf(head: &DtcHead, f: &DVector<f64>) -> f64 {
    let k = f.len() as f64;
    -0.5 * f.dot(&head.alpha)
        - 0.5 * head.chol.log_det()
        - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
}

/// Reverse-mode pass of the DTC head (plus, optionally, the Gaussian prior
/// on the inducing outputs).
pub(crate) struct DtcBackward {
    pub grad_f: DVector<f64>,
    pub grad_z: DMatrix<f64>,
    pub grad_log_amplitude: f64,
    pub grad_log_inv_lengthscale: f64,
    /// Adjoint of the input matrix (flows into the latent layer of the
    /// deep model; unused when the inputs are fixed features).
    pub grad_inputs: DMatrix<f64>,
}

pub(crate) fn dtc_backward(
    head: &DtcHead,
    params: &KernelParams,
    inputs: &DMatrix<f64>,
    z: &DMatrix<f64>,
    g_r: &DVector<f64>,
    include_prior: bool,
) -> DtcBackward {
    // r = K_inZ alpha with alpha = K_ZZ^{-1} f.
    let atg = head.a_mat.tr_mul(g_r); // A' g_r
    let mut grad_f = atg.clone();
    // dL/dK_inZ = g_r alpha'
    let s_in_z = g_r * head.alpha.transpose();
    // dL/dK_ZZ from the reward path: -(A' g_r) alpha'
    let mut s_zz = -&atg * head.alpha.transpose();
    if include_prior {
        grad_f -= &head.alpha;
        let kzz_inv = head.chol.inverse();
        s_zz += head.alpha.clone() * head.alpha.transpose() * 0.5 - kzz_inv * 0.5;
    }

    let (amp_a, xi_a) = hyper_adjoints(params, &head.sqd_in_z, &head.k_in_z, &s_in_z);
    let (amp_b, xi_b) = hyper_adjoints(params, &head.sqd_zz, &head.kzz_raw, &s_zz);

    let (grad_inputs, gz1) = input_adjoints(params, inputs, z, &head.k_in_z, &s_in_z);
    let (gz2a, gz2b) = input_adjoints(params, z, z, &head.kzz_raw, &s_zz);

    DtcBackward {
        grad_f,
        grad_z: gz1 + gz2a + gz2b,
        grad_log_amplitude: amp_a + amp_b,
        grad_log_inv_lengthscale: xi_a + xi_b,
        grad_inputs,
    }
}
