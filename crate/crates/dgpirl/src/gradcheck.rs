//! Finite-difference validation of every analytic gradient in the crate.
//!
//! Each checker builds (or takes) an instance, evaluates the analytic
//! gradients once, then compares them per parameter block against central
//! finite differences of the corresponding objective. The differencing side
//! only ever calls the objective value, never the analytic gradient path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dgp::{elbo, elbo_gradients, DgpModel};
use crate::error::Result;
use crate::gpirl::{distinct_row_subset, gpirl_objective, GpirlModel};
use crate::kernel::KernelParams;
use crate::maxent::{maxent_gradient, maxent_log_likelihood};
use crate::mdp::{
    sample_demonstrations, soft_value_iteration, DemonstrationSet, RewardVector, TabularMdp,
};

/// Soft-VI tolerance used for every objective evaluation here; tight enough
/// that solver noise stays far below the h^2 differencing error.
const FD_INNER_TOL: f64 = 1e-12;

/// Outcome of one parameter block's comparison.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub block: String,
    pub max_rel_err: f64,
    pub analytic_sup: f64,
    pub fd_sup: f64,
}

fn block_report(block: &str, analytic: &[f64], fd: &[f64]) -> BlockReport {
    assert_eq!(analytic.len(), fd.len());
    let fd_sup = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let analytic_sup = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_abs = analytic
        .iter()
        .zip(fd)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    BlockReport {
        block: block.to_string(),
        max_rel_err: max_abs / fd_sup.max(1e-8),
        analytic_sup,
        fd_sup,
    }
}

fn random_mdp(rng: &mut ChaCha8Rng, n: usize, n_actions: usize, gamma: f64) -> TabularMdp {
    let transitions = (0..n_actions)
        .map(|_| {
            let mut m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.01..1.0));
            for s in 0..n {
                let sum: f64 = m.row(s).iter().sum();
                for sp in 0..n {
                    m[(s, sp)] /= sum;
                }
            }
            m
        })
        .collect();
    TabularMdp::with_uniform_start(transitions, gamma).expect("valid random mdp")
}

fn demos_from_reward(
    rng: &mut ChaCha8Rng,
    mdp: &TabularMdp,
    r: &RewardVector,
) -> DemonstrationSet {
    let soft = soft_value_iteration(mdp, r, 1e-10, mdp.default_max_iter(1e-10))
        .expect("soft VI on random instance");
    sample_demonstrations(mdp, &soft.policy, 5, 3, rng.gen()).expect("sampling")
}

// ---------------------------------------------------------------------------
// MaxEnt likelihood gradient (one block: the reward vector).

pub fn maxent_block_errors(
    mdp: &TabularMdp,
    r: &RewardVector,
    demos: &DemonstrationSet,
    h: f64,
) -> Result<Vec<BlockReport>> {
    let value = |rv: &DVector<f64>| -> Result<f64> {
        let reward = RewardVector::new(rv.clone())?;
        let soft =
            soft_value_iteration(mdp, &reward, FD_INNER_TOL, mdp.default_max_iter(FD_INNER_TOL))?;
        Ok(maxent_log_likelihood(demos, mdp, &soft))
    };
    let soft = soft_value_iteration(mdp, r, FD_INNER_TOL, mdp.default_max_iter(FD_INNER_TOL))?;
    let analytic = maxent_gradient(demos, mdp, &soft)?;
    let n = r.len();
    let mut fd = vec![0.0; n];
    for i in 0..n {
        let mut p = r.values().clone();
        p[i] += h;
        let mut m = r.values().clone();
        m[i] -= h;
        fd[i] = (value(&p)? - value(&m)?) / (2.0 * h);
    }
    Ok(vec![block_report("r", analytic.as_slice(), &fd)])
}

/// One seeded random small instance for the MaxEnt gradient.
pub fn check_maxent(seed: u64, h: f64) -> Result<Vec<BlockReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=8);
    let mdp = random_mdp(&mut rng, n, 3, 0.9);
    let r = RewardVector::new(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))?;
    let demos = demos_from_reward(&mut rng, &mdp, &r);
    maxent_block_errors(&mdp, &r, &demos, h)
}

// ---------------------------------------------------------------------------
// GPIRL objective gradients (blocks: f_tilde, kernel, Z).

pub fn gpirl_block_errors(
    model: &GpirlModel,
    x: &DMatrix<f64>,
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    h: f64,
) -> Result<Vec<BlockReport>> {
    let value =
        |m: &GpirlModel| -> Result<f64> { Ok(gpirl_objective(m, x, demos, mdp, FD_INNER_TOL)?.0) };
    let (_, grads) = gpirl_objective(model, x, demos, mdp, FD_INNER_TOL)?;
    let k = model.n_inducing();
    let m0 = model.inducing_inputs.ncols();

    let mut fd_f = vec![0.0; k];
    for i in 0..k {
        let mut p = model.clone();
        p.inducing_outputs[i] += h;
        let mut m = model.clone();
        m.inducing_outputs[i] -= h;
        fd_f[i] = (value(&p)? - value(&m)?) / (2.0 * h);
    }

    let mut fd_kernel = vec![0.0; 2];
    for (slot, fdk) in fd_kernel.iter_mut().enumerate() {
        let bump = |mut mm: GpirlModel, d: f64| {
            if slot == 0 {
                mm.kernel.log_amplitude += d;
            } else {
                mm.kernel.log_inv_lengthscale += d;
            }
            mm
        };
        *fdk = (value(&bump(model.clone(), h))? - value(&bump(model.clone(), -h))?) / (2.0 * h);
    }

    let mut fd_z = vec![0.0; k * m0];
    for i in 0..k {
        for j in 0..m0 {
            let mut p = model.clone();
            p.inducing_inputs[(i, j)] += h;
            let mut m = model.clone();
            m.inducing_inputs[(i, j)] -= h;
            fd_z[i * m0 + j] = (value(&p)? - value(&m)?) / (2.0 * h);
        }
    }
    let mut an_z = vec![0.0; k * m0];
    for i in 0..k {
        for j in 0..m0 {
            an_z[i * m0 + j] = grads.z[(i, j)];
        }
    }

    Ok(vec![
        block_report("f_tilde", grads.f_tilde.as_slice(), &fd_f),
        block_report(
            "kernel",
            &[grads.log_amplitude, grads.log_inv_lengthscale],
            &fd_kernel,
        ),
        block_report("z", &an_z, &fd_z),
    ])
}

/// One seeded random small instance for the GPIRL objective gradient.
pub fn check_gpirl(seed: u64, h: f64) -> Result<Vec<BlockReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=8);
    let m0 = 2;
    let k = rng.gen_range(2..=4);
    let mdp = random_mdp(&mut rng, n, 2, 0.9);
    let x = DMatrix::from_fn(n, m0, |_, _| rng.gen_range(-1.5..1.5));
    let model = GpirlModel::new(
        DMatrix::from_fn(k, m0, |_, _| rng.gen_range(-1.5..1.5)),
        DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0)),
        KernelParams::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))?,
    )?;
    let r = crate::gpirl::gpirl_reward(&model, &x)?;
    let demos = demos_from_reward(&mut rng, &mdp, &r);
    gpirl_block_errors(&model, &x, &demos, &mdp, h)
}

// ---------------------------------------------------------------------------
// Deep-model ELBO gradients (blocks mirroring every trainable field).

pub fn dgp_block_errors(
    model: &DgpModel,
    x: &DMatrix<f64>,
    demos: &DemonstrationSet,
    mdp: &TabularMdp,
    h: f64,
) -> Result<Vec<BlockReport>> {
    let value = |m: &DgpModel| -> Result<f64> { Ok(elbo(m, x, demos, mdp, FD_INNER_TOL)?.total) };
    let (_, grads) = elbo_gradients(model, x, demos, mdp, FD_INNER_TOL)?;
    let k_w = model.w.nrows();
    let k_z = model.z.nrows();
    let m1 = model.m1;
    let d_in = model.z.ncols();
    let mut reports = Vec::new();

    let mut fd = vec![0.0; k_z];
    for i in 0..k_z {
        let mut p = model.clone();
        p.f_tilde[i] += h;
        let mut m = model.clone();
        m.f_tilde[i] -= h;
        fd[i] = (value(&p)? - value(&m)?) / (2.0 * h);
    }
    reports.push(block_report("f_tilde", grads.f_tilde.as_slice(), &fd));

    let mut fd = Vec::with_capacity(k_w * m1);
    let mut an = Vec::with_capacity(k_w * m1);
    for mm in 0..m1 {
        for i in 0..k_w {
            let mut p = model.clone();
            p.v_tilde[(i, mm)] += h;
            let mut q = model.clone();
            q.v_tilde[(i, mm)] -= h;
            fd.push((value(&p)? - value(&q)?) / (2.0 * h));
            an.push(grads.v_tilde[(i, mm)]);
        }
    }
    reports.push(block_report("v_tilde", &an, &fd));

    // Raw lower-triangular factor entries, diagonals included.
    let mut fd = Vec::new();
    let mut an = Vec::new();
    for mm in 0..m1 {
        for i in 0..k_w {
            for j in 0..=i {
                let mut p = model.clone();
                p.g_chol[mm][(i, j)] += h;
                let mut q = model.clone();
                q.g_chol[mm][(i, j)] -= h;
                fd.push((value(&p)? - value(&q)?) / (2.0 * h));
                an.push(grads.g_chol[mm][(i, j)]);
            }
        }
    }
    reports.push(block_report("g_chol", &an, &fd));

    let mut fd = Vec::with_capacity(k_z * d_in);
    let mut an = Vec::with_capacity(k_z * d_in);
    for i in 0..k_z {
        for j in 0..d_in {
            let mut p = model.clone();
            p.z[(i, j)] += h;
            let mut q = model.clone();
            q.z[(i, j)] -= h;
            fd.push((value(&p)? - value(&q)?) / (2.0 * h));
            an.push(grads.z[(i, j)]);
        }
    }
    reports.push(block_report("z", &an, &fd));

    for (name, which) in [("kernel_b", 0usize), ("kernel_r", 1usize)] {
        let bump = |mut m: DgpModel, slot: usize, d: f64| {
            let kp = if which == 0 {
                &mut m.kernel_b
            } else {
                &mut m.kernel_r
            };
            if slot == 0 {
                kp.log_amplitude += d;
            } else {
                kp.log_inv_lengthscale += d;
            }
            m
        };
        let fd = [
            (value(&bump(model.clone(), 0, h))? - value(&bump(model.clone(), 0, -h))?) / (2.0 * h),
            (value(&bump(model.clone(), 1, h))? - value(&bump(model.clone(), 1, -h))?) / (2.0 * h),
        ];
        let an = if which == 0 {
            [grads.kernel_b.0, grads.kernel_b.1]
        } else {
            [grads.kernel_r.0, grads.kernel_r.1]
        };
        reports.push(block_report(name, &an, &fd));
    }

    let mut p = model.clone();
    p.log_lambda += h;
    let mut q = model.clone();
    q.log_lambda -= h;
    let fd = [(value(&p)? - value(&q)?) / (2.0 * h)];
    reports.push(block_report("log_lambda", &[grads.log_lambda], &fd));

    Ok(reports)
}

/// One seeded random small instance for the deep-model gradients.
pub fn check_dgp(seed: u64, h: f64) -> Result<Vec<BlockReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=7);
    let m0 = 3;
    let m1 = 2;
    let k = 3;
    let mdp = random_mdp(&mut rng, n, 2, 0.9);
    let x = DMatrix::from_fn(n, m0, |_, _| rng.gen_range(-1.5..1.5));
    let (w, w_indices) = distinct_row_subset(&x, k, &mut rng);
    let k_w = w.nrows();
    let mut g_chol = Vec::new();
    for _ in 0..m1 {
        let mut l = DMatrix::zeros(k_w, k_w);
        for i in 0..k_w {
            for j in 0..i {
                l[(i, j)] = rng.gen_range(-0.3..0.3);
            }
            l[(i, i)] = rng.gen_range(0.3..1.2);
        }
        g_chol.push(l);
    }
    let model = DgpModel {
        w,
        w_indices,
        z: DMatrix::from_fn(k, m1, |_, _| rng.gen_range(-1.0..1.0)),
        v_tilde: DMatrix::from_fn(k_w, m1, |_, _| rng.gen_range(-1.0..1.0)),
        g_chol,
        f_tilde: DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0)),
        kernel_b: KernelParams::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))?,
        kernel_r: KernelParams::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))?,
        log_lambda: rng.gen_range(-0.5..1.5),
        m1,
        augment_input: false,
    };
    model.validate()?;
    let r = crate::dgp::reward_from_latent(&model, &crate::dgp::latent_means(&model, &x)?)?;
    let demos = demos_from_reward(&mut rng, &mdp, &r);
    dgp_block_errors(&model, &x, &demos, &mdp, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxent_check_passes_on_several_seeds() {
        for seed in 0..5 {
            for rep in check_maxent(seed, 1e-5).unwrap() {
                assert!(rep.max_rel_err <= 1e-4, "seed {seed}: {rep:?}");
            }
        }
    }

    #[test]
    fn gpirl_check_passes_on_several_seeds() {
        for seed in 0..5 {
            for rep in check_gpirl(seed, 1e-5).unwrap() {
                assert!(rep.max_rel_err <= 1e-4, "seed {seed}: {rep:?}");
            }
        }
    }

    #[test]
    fn dgp_check_passes_on_several_seeds() {
        for seed in 0..5 {
            for rep in check_dgp(seed, 1e-5).unwrap() {
                assert!(rep.max_rel_err <= 1e-4, "seed {seed}: {rep:?}");
            }
        }
    }
}
