//! Experiment configuration: a single JSON document pinning the world
//! generator, seeds, demonstration sweep and per-method hyperparameters.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    /// Demonstration counts; larger sets extend smaller ones (prefixes of
    /// one sample at the largest count).
    pub demo_counts: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub transfer: bool,
    /// Output directory; overridable by `--out` and the `DGPIRL_OUT`
    /// environment variable.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the cell grid; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub demo_policy: DemoPolicy,
    /// Wall-clock budget per training cell.
    #[serde(default = "default_budget_ms")]
    pub cell_budget_ms: u64,
}

fn default_horizon() -> usize {
    8
}

fn default_budget_ms() -> u64 {
    600_000
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.world.seeds.is_empty() {
            anyhow::bail!("config: world.seeds must be nonempty");
        }
        if self.demo_counts.is_empty() {
            anyhow::bail!("config: demo_counts must be nonempty");
        }
        if self.demo_counts.iter().any(|c| *c == 0) {
            anyhow::bail!("config: demo counts must be positive");
        }
        if self.horizon == 0 {
            anyhow::bail!("config: horizon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub generator: Generator,
    #[serde(default)]
    pub params: WorldParams,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    ObjectWorld,
    BinaryWorld,
    Highway,
}

impl Generator {
    pub fn label(&self) -> &'static str {
        match self {
            Generator::ObjectWorld => "object_world",
            Generator::BinaryWorld => "binary_world",
            Generator::Highway => "highway",
        }
    }
}

/// Optional overrides of the generator defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    pub n: Option<usize>,
    pub n_outer_colors: Option<usize>,
    pub dot_density: Option<f64>,
    pub wind: Option<f64>,
    pub gamma: Option<f64>,
    pub length: Option<usize>,
    pub n_vehicles: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoPolicy {
    /// Sample from the stochastic MaxEnt policy of the true reward (the
    /// generative process the likelihood assumes).
    #[default]
    Soft,
    /// Sample from the greedy optimal policy instead.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Linear,
    Gpirl,
    Dgp,
}

impl MethodName {
    pub fn label(&self) -> &'static str {
        match self {
            MethodName::Linear => "linear",
            MethodName::Gpirl => "gpirl",
            MethodName::Dgp => "dgp",
        }
    }
}

/// One method entry with optional hyperparameter overrides; fields that do
/// not apply to a method are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: MethodName,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default)]
    pub memory: Option<usize>,
    #[serde(default)]
    pub inner_tol: Option<f64>,
    /// Inducing point count (`gpirl`: Z; `dgp`: both layers unless the
    /// per-layer fields are set).
    #[serde(default)]
    pub n_inducing: Option<usize>,
    #[serde(default)]
    pub m1: Option<usize>,
    #[serde(default)]
    pub k_w: Option<usize>,
    #[serde(default)]
    pub k_z: Option<usize>,
    #[serde(default)]
    pub augment_input: bool,
    /// Independent training restarts; the best-objective run is kept.
    #[serde(default)]
    pub restarts: Option<u64>,
}

impl MethodConfig {
    pub fn new(name: MethodName) -> Self {
        MethodConfig {
            name,
            iterations: None,
            warmup: None,
            memory: None,
            inner_tol: None,
            n_inducing: None,
            m1: None,
            k_w: None,
            k_z: None,
            augment_input: false,
            restarts: None,
        }
    }
}
