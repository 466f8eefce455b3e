//! Command-line interface: world generation, demonstration sampling,
//! training, evaluation, experiment sweeps and gradient validation.
//!
//! Exit codes: 0 on success, 1 on partial per-cell failure (or failed
//! gradient checks), 2 on configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dgpirl::gradcheck;
use dgpirl::mdp::{sample_demonstrations, DemonstrationSet};
use dgpirl::worlds::WorldInstance;

use dgpirl_cli::config::{
    DemoPolicy, ExperimentConfig, Generator, MethodConfig, MethodName, WorldParams, WorldSpec,
};
use dgpirl_cli::report::{emit_report, CellStatus, ReportFormat};
use dgpirl_cli::runner::{
    demo_policy, evd_of_reward, generate_world, resolve_out_dir, run_experiment, AnyModel,
};

#[derive(Parser)]
#[command(name = "dgpirl", about = "Inverse reinforcement learning with deep GP reward models")]
struct Cli {
    /// Default seed for seeded subcommands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Experiment configuration file (for `sweep`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tolerance override (gradient checks).
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark world and write it as JSON.
    Gen(GenArgs),
    /// Sample demonstrations from a world's true reward.
    Demo(DemoArgs),
    /// Train a method on a world and demonstration file.
    Train(TrainArgs),
    /// Evaluate a model file on a world: prints the EVD.
    Eval(EvalArgs),
    /// Run a configuration-driven experiment sweep.
    Sweep(SweepArgs),
    /// Validate analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WorldKind {
    ObjectWorld,
    BinaryWorld,
    Highway,
}

impl From<WorldKind> for Generator {
    fn from(w: WorldKind) -> Generator {
        match w {
            WorldKind::ObjectWorld => Generator::ObjectWorld,
            WorldKind::BinaryWorld => Generator::BinaryWorld,
            WorldKind::Highway => Generator::Highway,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    world: WorldKind,
    /// Grid size (object/binary worlds).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_outer_colors: Option<usize>,
    #[arg(long)]
    dot_density: Option<f64>,
    #[arg(long)]
    wind: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Road length (highway).
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    n_vehicles: Option<usize>,
    /// Output file for the world JSON.
    #[arg(long = "file", short = 'f')]
    file: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// World JSON file.
    #[arg(long)]
    world: PathBuf,
    /// Number of trajectories.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
    /// Sample from the greedy optimal policy instead of the soft policy.
    #[arg(long)]
    greedy: bool,
    #[arg(long = "file", short = 'f')]
    file: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    demos: PathBuf,
    #[arg(long, value_enum)]
    method: MethodKind,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    n_inducing: Option<usize>,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    restarts: Option<u64>,
    #[arg(long = "file", short = 'f')]
    file: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodKind {
    Linear,
    Gpirl,
    Dgp,
}

impl From<MethodKind> for MethodName {
    fn from(m: MethodKind) -> MethodName {
        match m {
            MethodKind::Linear => MethodName::Linear,
            MethodKind::Gpirl => MethodName::Gpirl,
            MethodKind::Dgp => MethodName::Dgp,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    world: PathBuf,
}

#[derive(Args)]
struct SweepArgs {}

#[derive(Clone, Copy, ValueEnum)]
enum CheckMethod {
    Maxent,
    Gpirl,
    Dgp,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    method: CheckMethod,
    #[arg(long, default_value_t = 20)]
    instances: u64,
}

fn load_world(path: &PathBuf) -> anyhow::Result<WorldInstance> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Gen(args) => {
            let spec = WorldSpec {
                generator: args.world.into(),
                params: WorldParams {
                    n: args.n,
                    n_outer_colors: args.n_outer_colors,
                    dot_density: args.dot_density,
                    wind: args.wind,
                    gamma: args.gamma,
                    length: args.length,
                    n_vehicles: args.n_vehicles,
                },
                seeds: vec![cli.seed],
            };
            let world = generate_world(&spec, cli.seed)?;
            std::fs::write(&args.file, serde_json::to_string_pretty(&world)?)?;
            println!(
                "wrote {} ({} states, {} features)",
                args.file.display(),
                world.mdp.n_states(),
                world.features.ncols()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Demo(args) => {
            let world = load_world(&args.world)?;
            let mode = if args.greedy {
                DemoPolicy::Greedy
            } else {
                DemoPolicy::Soft
            };
            let policy = demo_policy(&world, mode)?;
            let demos =
                sample_demonstrations(&world.mdp, &policy, args.horizon, args.count, cli.seed)?;
            std::fs::write(&args.file, serde_json::to_string(&demos)?)?;
            println!(
                "wrote {} ({} trajectories x {} steps)",
                args.file.display(),
                demos.n_trajectories(),
                args.horizon
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => {
            let world = load_world(&args.world)?;
            let demos_text = std::fs::read_to_string(&args.demos)
                .map_err(|e| anyhow::anyhow!("reading {}: {e}", args.demos.display()))?;
            let demos: DemonstrationSet = serde_json::from_str(&demos_text)?;
            demos.validate(world.mdp.n_states(), world.mdp.n_actions())?;
            let mut method = MethodConfig::new(args.method.into());
            method.iterations = args.iterations;
            method.n_inducing = args.n_inducing;
            method.m1 = args.m1;
            method.restarts = args.restarts;
            let cell = dgpirl_cli::runner::train_single(
                &method,
                &world,
                &demos,
                cli.seed,
                600_000,
            )?;
            std::fs::write(&args.file, &cell.0)?;
            println!(
                "wrote {} (objective {}, training EVD {})",
                args.file.display(),
                cell.1,
                cell.2
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(args) => {
            let world = load_world(&args.world)?;
            let text = std::fs::read_to_string(&args.model)
                .map_err(|e| anyhow::anyhow!("reading {}: {e}", args.model.display()))?;
            let model = AnyModel::from_json(&text)?;
            let r = model.reward(&world.features)?;
            let evd = evd_of_reward(&world.mdp, &world.true_reward, &r)?;
            println!("method {} evd {evd}", model.kind());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(_) => {
            let path = cli
                .config
                .ok_or_else(|| anyhow::anyhow!("sweep requires --config <path>"))?;
            let text = std::fs::read_to_string(&path)
                .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
            let config: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))?;
            config.validate()?;
            let out_dir = resolve_out_dir(cli.out.as_deref(), &config)?;
            let report = run_experiment(&config, &out_dir)?;
            emit_report(&report, &out_dir, &[ReportFormat::Csv, ReportFormat::Json])?;
            let failed = report
                .cells
                .iter()
                .filter(|c| c.status != CellStatus::Ok)
                .count();
            println!(
                "sweep complete: {} cells ({} failed), report in {}",
                report.cells.len(),
                failed,
                out_dir.display()
            );
            if failed > 0 {
                Ok(ExitCode::from(1))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Gradcheck(args) => {
            let h = 1e-5;
            let tol = cli.tol.unwrap_or(1e-4);
            let mut failures = 0;
            println!("{:<10} {:<12} {:>14} {:>14} {:>12}  result", "instance", "block", "analytic_sup", "fd_sup", "max_rel_err");
            for i in 0..args.instances {
                let seed = cli.seed.wrapping_add(i);
                let reports = match args.method {
                    CheckMethod::Maxent => gradcheck::check_maxent(seed, h),
                    CheckMethod::Gpirl => gradcheck::check_gpirl(seed, h),
                    CheckMethod::Dgp => gradcheck::check_dgp(seed, h),
                }?;
                for rep in reports {
                    let pass = rep.max_rel_err <= tol;
                    if !pass {
                        failures += 1;
                    }
                    println!(
                        "{:<10} {:<12} {:>14.6e} {:>14.6e} {:>12.3e}  {}",
                        seed,
                        rep.block,
                        rep.analytic_sup,
                        rep.fd_sup,
                        rep.max_rel_err,
                        if pass { "ok" } else { "FAIL" }
                    );
                }
            }
            if failures > 0 {
                eprintln!("{failures} block(s) exceeded tolerance {tol}");
                Ok(ExitCode::from(1))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}
