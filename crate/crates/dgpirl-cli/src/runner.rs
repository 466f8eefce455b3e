//! Configuration-driven experiment runner: generates worlds, samples nested
//! demonstration sets, trains every configured method over the
//! (seed x method x demo count) grid, evaluates training and transfer EVD,
//! persists models, and assembles the report.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use dgpirl::dgp::{self, DgpConfig};
use dgpirl::gpirl::{gpirl_reward, gpirl_train, GpirlConfig, GpirlModel};
use dgpirl::maxent::{fit_linear_maxent, LinearFitOptions, LinearRewardModel};
use dgpirl::mdp::{
    discounted_occupancy, expected_value_difference, hard_value_iteration, sample_demonstrations,
    soft_value_iteration, DemonstrationSet, RewardVector, TabularMdp,
};
use dgpirl::opt::OptimizerConfig;
use dgpirl::worlds::{
    gen_binary_world, gen_highway, gen_object_world, speeding_mask, BinaryWorldConfig,
    HighwayConfig, ObjectWorldConfig, WorldInstance,
};

use crate::config::{DemoPolicy, ExperimentConfig, Generator, MethodConfig, MethodName, WorldSpec};
use crate::report::{mean_std, Aggregate, CellResult, CellStatus, ExperimentReport};

/// Deterministic seed derivation for independent random streams.
pub fn splitmix64(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Transfer worlds must never share a seed with any training world.
pub fn transfer_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    let mut t = splitmix64(seed, 2);
    while cfg.world.seeds.contains(&t) {
        t = splitmix64(t, 2);
    }
    t
}

pub fn generate_world(spec: &WorldSpec, seed: u64) -> anyhow::Result<WorldInstance> {
    let p = &spec.params;
    let world = match spec.generator {
        Generator::ObjectWorld => {
            let d = ObjectWorldConfig::default();
            gen_object_world(&ObjectWorldConfig {
                n: p.n.unwrap_or(d.n),
                n_outer_colors: p.n_outer_colors.unwrap_or(d.n_outer_colors),
                dot_density: p.dot_density.unwrap_or(d.dot_density),
                wind: p.wind.unwrap_or(d.wind),
                gamma: p.gamma.unwrap_or(d.gamma),
                seed,
            })?
        }
        Generator::BinaryWorld => {
            let d = BinaryWorldConfig::default();
            gen_binary_world(&BinaryWorldConfig {
                n: p.n.unwrap_or(d.n),
                wind: p.wind.unwrap_or(d.wind),
                gamma: p.gamma.unwrap_or(d.gamma),
                seed,
            })?
        }
        Generator::Highway => {
            let d = HighwayConfig::default();
            gen_highway(&HighwayConfig {
                length: p.length.unwrap_or(d.length),
                n_vehicles: p.n_vehicles.unwrap_or(d.n_vehicles),
                gamma: p.gamma.unwrap_or(d.gamma),
                seed,
                ..d
            })?
        }
    };
    Ok(world)
}

/// Greedy policy of a learned reward, evaluated under the true reward.
pub fn evd_of_reward(
    mdp: &TabularMdp,
    r_true: &RewardVector,
    r_hat: &RewardVector,
) -> dgpirl::Result<f64> {
    let (_, pol) = hard_value_iteration(mdp, r_hat, 1e-8, mdp.default_max_iter(1e-8))?;
    expected_value_difference(mdp, r_true, &pol.to_stochastic(mdp.n_actions()))
}

/// Occupancy mass on rule-violating states under the greedy policy of a
/// learned reward; `None` for worlds without a speeding rule.
pub fn speeding_probability(
    world: &WorldInstance,
    r_hat: &RewardVector,
) -> dgpirl::Result<Option<f64>> {
    let Some(mask) = speeding_mask(world) else {
        return Ok(None);
    };
    let (_, pol) =
        hard_value_iteration(&world.mdp, r_hat, 1e-8, world.mdp.default_max_iter(1e-8))?;
    let rho = discounted_occupancy(&world.mdp, &pol.to_stochastic(world.mdp.n_actions()))?;
    let p = mask
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(s, _)| rho[s])
        .sum();
    Ok(Some(p))
}

/// Sample the demonstration policy for a world per the configured mode.
pub fn demo_policy(world: &WorldInstance, mode: DemoPolicy) -> dgpirl::Result<DMatrix<f64>> {
    let mdp = &world.mdp;
    match mode {
        DemoPolicy::Soft => {
            let soft =
                soft_value_iteration(mdp, &world.true_reward, 1e-8, mdp.default_max_iter(1e-8))?;
            Ok(soft.policy)
        }
        DemoPolicy::Greedy => {
            let (_, pol) =
                hard_value_iteration(mdp, &world.true_reward, 1e-8, mdp.default_max_iter(1e-8))?;
            Ok(pol.to_stochastic(mdp.n_actions()))
        }
    }
}

/// A trained model in serialized form plus its rewards.
struct TrainedCell {
    objective: f64,
    model_json: String,
    r_train: RewardVector,
    r_transfer: Option<RewardVector>,
}

fn opt_cfg(m: &MethodConfig, default_iters: usize) -> OptimizerConfig {
    OptimizerConfig {
        max_iters: m.iterations.unwrap_or(default_iters),
        memory: m.memory.unwrap_or(10),
        ..OptimizerConfig::default()
    }
}

fn train_cell(
    m: &MethodConfig,
    world: &WorldInstance,
    transfer_world: Option<&WorldInstance>,
    demos: &DemonstrationSet,
    seed: u64,
    budget_ms: u64,
) -> dgpirl::Result<TrainedCell> {
    let inner_tol = m.inner_tol.unwrap_or(1e-8);
    match m.name {
        MethodName::Linear => {
            let opts = LinearFitOptions {
                opt: opt_cfg(m, 200),
                inner_tol,
            };
            let model = fit_linear_maxent(demos, &world.features, &world.mdp, &opts)?;
            let r = model.reward(&world.features)?;
            let soft = soft_value_iteration(
                &world.mdp,
                &r,
                inner_tol,
                world.mdp.default_max_iter(inner_tol),
            )?;
            let objective =
                dgpirl::maxent::maxent_log_likelihood(demos, &world.mdp, &soft);
            Ok(TrainedCell {
                objective,
                model_json: serde_json::to_string_pretty(&model)
                    .map_err(|e| dgpirl::Error::Serialization(e.to_string()))?,
                r_transfer: transfer_world.map(|w| model.reward(&w.features)).transpose()?,
                r_train: r,
            })
        }
        MethodName::Gpirl => {
            let cfg = GpirlConfig {
                n_inducing: m.n_inducing,
                seed,
                opt: opt_cfg(m, 300),
                warmup_iters: m.warmup.unwrap_or(120),
                inner_tol,
                budget_ms: Some(budget_ms),
                ..GpirlConfig::default()
            };
            let trained = gpirl_train(&world.features, demos, &world.mdp, &cfg)?;
            Ok(TrainedCell {
                objective: trained.objective,
                model_json: serde_json::to_string_pretty(&trained.model)
                    .map_err(|e| dgpirl::Error::Serialization(e.to_string()))?,
                r_train: gpirl_reward(&trained.model, &world.features)?,
                r_transfer: transfer_world
                    .map(|w| gpirl_reward(&trained.model, &w.features))
                    .transpose()?,
            })
        }
        MethodName::Dgp => {
            let restarts = m.restarts.unwrap_or(1).max(1);
            let started = Instant::now();
            let mut best: Option<dgp::DgpTrained> = None;
            for r in 0..restarts {
                let remaining =
                    budget_ms.saturating_sub(started.elapsed().as_millis() as u64);
                let cfg = DgpConfig {
                    m1: m.m1,
                    k_w: m.k_w.or(m.n_inducing),
                    k_z: m.k_z.or(m.n_inducing),
                    augment_input: m.augment_input,
                    seed: splitmix64(seed, 7 + r),
                    opt: opt_cfg(m, 420),
                    warmup_iters: m.warmup.unwrap_or(150),
                    inner_tol,
                    budget_ms: Some(remaining),
                };
                let cand = dgp::train(&world.features, demos, &world.mdp, &cfg)?;
                if best
                    .as_ref()
                    .map_or(true, |b| cand.breakdown.total > b.breakdown.total)
                {
                    best = Some(cand);
                }
            }
            let trained = best.expect("at least one restart");
            let d = dgp::latent_means(&trained.model, &world.features)?;
            Ok(TrainedCell {
                objective: trained.breakdown.total,
                model_json: serde_json::to_string_pretty(&trained.model)
                    .map_err(|e| dgpirl::Error::Serialization(e.to_string()))?,
                r_train: dgp::reward_from_latent(&trained.model, &d)?,
                r_transfer: transfer_world
                    .map(|w| dgp::transfer_predict(&trained.model, &w.features))
                    .transpose()?,
            })
        }
    }
}

/// Train one method on a world + demonstrations; returns the serialized
/// model, its training objective, and the training EVD.
pub fn train_single(
    method: &MethodConfig,
    world: &WorldInstance,
    demos: &DemonstrationSet,
    seed: u64,
    budget_ms: u64,
) -> anyhow::Result<(String, f64, f64)> {
    let cell = train_cell(method, world, None, demos, seed, budget_ms)?;
    let evd = evd_of_reward(&world.mdp, &world.true_reward, &cell.r_train)?;
    Ok((cell.model_json, cell.objective, evd))
}

struct SeedContext {
    seed: u64,
    world: WorldInstance,
    transfer_world: Option<WorldInstance>,
    /// One sample at the largest count; sweep levels take prefixes.
    demos_full: DemonstrationSet,
}

/// Run the full experiment grid. Per-cell failures are recorded in the
/// report and do not abort the run.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> anyhow::Result<ExperimentReport> {
    config
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
    let world_label = config.world.generator.label().to_string();
    let max_count = *config.demo_counts.iter().max().expect("nonempty");

    let contexts: Vec<SeedContext> = config
        .world
        .seeds
        .iter()
        .map(|&seed| -> anyhow::Result<SeedContext> {
            let world = generate_world(&config.world, seed)?;
            let policy = demo_policy(&world, config.demo_policy)?;
            let demos_full = sample_demonstrations(
                &world.mdp,
                &policy,
                config.horizon,
                max_count,
                splitmix64(seed, 1),
            )?;
            let transfer_world = if config.transfer {
                Some(generate_world(&config.world, transfer_seed(config, seed))?)
            } else {
                None
            };
            Ok(SeedContext {
                seed,
                world,
                transfer_world,
                demos_full,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let contexts = Arc::new(contexts);

    let models_dir = out_dir.join("models");
    std::fs::create_dir_all(&models_dir)
        .map_err(|e| anyhow::anyhow!("creating {}: {e}", models_dir.display()))?;

    // The (seed x method x count) grid, run cell-parallel.
    let mut jobs = Vec::new();
    for (ci, ctx) in contexts.iter().enumerate() {
        for method in &config.methods {
            for &count in &config.demo_counts {
                jobs.push((ci, method.clone(), count, ctx.seed));
            }
        }
    }

    let run_jobs = |jobs: &[(usize, MethodConfig, usize, u64)]| -> Vec<CellResult> {
        jobs.par_iter()
            .map(|(ci, method, count, seed)| {
                let ctx = &contexts[*ci];
                let demos = ctx.demos_full.prefix(*count);
                let started = Instant::now();
                let outcome = train_cell(
                    method,
                    &ctx.world,
                    ctx.transfer_world.as_ref(),
                    &demos,
                    *seed,
                    config.cell_budget_ms,
                );
                let wall_ms = started.elapsed().as_millis() as u64;
                let label = method.name.label().to_string();
                match outcome.and_then(|cell| {
                    let evd_train =
                        evd_of_reward(&ctx.world.mdp, &ctx.world.true_reward, &cell.r_train)?;
                    let evd_transfer = match (&ctx.transfer_world, &cell.r_transfer) {
                        (Some(w), Some(r)) => {
                            Some(evd_of_reward(&w.mdp, &w.true_reward, r)?)
                        }
                        _ => None,
                    };
                    let speeding = speeding_probability(&ctx.world, &cell.r_train)?;
                    Ok((cell, evd_train, evd_transfer, speeding))
                }) {
                    Ok((cell, evd_train, evd_transfer, speeding_prob)) => {
                        let model_path =
                            models_dir.join(format!("{label}-{}-d{count}-s{seed}.json", world_label));
                        let write_err = std::fs::write(&model_path, &cell.model_json).err();
                        CellResult {
                            method: label,
                            world: world_label.clone(),
                            demo_count: *count,
                            seed: *seed,
                            status: if write_err.is_some() {
                                CellStatus::Failed
                            } else {
                                CellStatus::Ok
                            },
                            evd_train: Some(evd_train),
                            evd_transfer,
                            objective: Some(cell.objective),
                            speeding_prob,
                            wall_ms,
                            model_path: Some(model_path.display().to_string()),
                            error: write_err.map(|e| format!("writing model: {e}")),
                        }
                    }
                    Err(err) => CellResult {
                        method: label,
                        world: world_label.clone(),
                        demo_count: *count,
                        seed: *seed,
                        status: if matches!(err, dgpirl::Error::Timeout { .. }) {
                            CellStatus::Timeout
                        } else {
                            CellStatus::Failed
                        },
                        evd_train: None,
                        evd_transfer: None,
                        objective: None,
                        speeding_prob: None,
                        wall_ms,
                        model_path: None,
                        error: Some(err.to_string()),
                    },
                }
            })
            .collect()
    };

    let mut cells = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?
            .install(|| run_jobs(&jobs))
    } else {
        run_jobs(&jobs)
    };
    cells.sort_by(|a, b| {
        (&a.method, a.demo_count, a.seed).cmp(&(&b.method, b.demo_count, b.seed))
    });

    // Aggregates per (method, demo count) over completed seeds.
    let mut aggregates = Vec::new();
    for method in &config.methods {
        for &count in &config.demo_counts {
            let label = method.name.label();
            let done: Vec<&CellResult> = cells
                .iter()
                .filter(|c| {
                    c.method == label && c.demo_count == count && c.status == CellStatus::Ok
                })
                .collect();
            let train: Vec<f64> = done.iter().filter_map(|c| c.evd_train).collect();
            let transfer: Vec<f64> = done.iter().filter_map(|c| c.evd_transfer).collect();
            let (mean_train, std_train) = mean_std(&train);
            let (mean_transfer, std_transfer) = mean_std(&transfer);
            aggregates.push(Aggregate {
                method: label.to_string(),
                demo_count: count,
                n: done.len(),
                mean_train,
                std_train,
                mean_transfer,
                std_transfer,
            });
        }
    }

    Ok(ExperimentReport {
        config: config.clone(),
        cells,
        aggregates,
    })
}

/// Load a model file of any supported kind and compute its reward on a
/// world's features.
pub enum AnyModel {
    Linear(LinearRewardModel),
    Gpirl(GpirlModel),
    Dgp(dgp::DgpModel),
}

impl AnyModel {
    pub fn from_json(json: &str) -> anyhow::Result<AnyModel> {
        let value: serde_json::Value = serde_json::from_str(json)?;
        if value.get("version").is_some() {
            Ok(AnyModel::Dgp(serde_json::from_str(json)?))
        } else if value.get("Z").is_some() {
            Ok(AnyModel::Gpirl(serde_json::from_str(json)?))
        } else if value.get("weights").is_some() {
            Ok(AnyModel::Linear(serde_json::from_str(json)?))
        } else {
            anyhow::bail!("unrecognized model file (no version/Z/weights key)")
        }
    }

    pub fn reward(&self, features: &DMatrix<f64>) -> dgpirl::Result<RewardVector> {
        match self {
            AnyModel::Linear(m) => m.reward(features),
            AnyModel::Gpirl(m) => gpirl_reward(m, features),
            AnyModel::Dgp(m) => dgp::transfer_predict(m, features),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Linear(_) => "linear",
            AnyModel::Gpirl(_) => "gpirl",
            AnyModel::Dgp(_) => "dgp",
        }
    }
}

/// Resolve the output directory: CLI flag, then `DGPIRL_OUT`, then config.
pub fn resolve_out_dir(
    cli: Option<&Path>,
    config: &ExperimentConfig,
) -> anyhow::Result<PathBuf> {
    if let Some(p) = cli {
        return Ok(p.to_path_buf());
    }
    if let Ok(env) = std::env::var("DGPIRL_OUT") {
        if !env.is_empty() {
            return Ok(PathBuf::from(env));
        }
    }
    config
        .out_dir
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no output directory (config out_dir, --out, or DGPIRL_OUT)"))
}
