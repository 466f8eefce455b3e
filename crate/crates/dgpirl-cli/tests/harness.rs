//! Harness-level tests: report schemas, emission round trips, nested
//! demonstration sets, determinism and model re-evaluation.

use dgpirl_cli::config::{
    DemoPolicy, ExperimentConfig, Generator, MethodConfig, MethodName, WorldParams, WorldSpec,
};
use dgpirl_cli::report::{emit_report, results_csv, CellStatus, ExperimentReport, ReportFormat};
use dgpirl_cli::runner::{
    evd_of_reward, generate_world, run_experiment, transfer_seed, AnyModel,
};
use dgpirl_cli::svg::{render_line_chart, Series};

fn tiny_config(methods: Vec<MethodConfig>) -> ExperimentConfig {
    ExperimentConfig {
        world: WorldSpec {
            generator: Generator::BinaryWorld,
            params: WorldParams {
                n: Some(5),
                ..WorldParams::default()
            },
            seeds: vec![0, 1],
        },
        demo_counts: vec![4, 8],
        horizon: 6,
        methods,
        transfer: true,
        out_dir: None,
        workers: 0,
        demo_policy: DemoPolicy::Soft,
        cell_budget_ms: 600_000,
    }
}

fn fast_gpirl() -> MethodConfig {
    MethodConfig {
        iterations: Some(30),
        warmup: Some(15),
        n_inducing: Some(5),
        ..MethodConfig::new(MethodName::Gpirl)
    }
}

#[test]
fn empty_methods_give_valid_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(vec![]);
    let report = run_experiment(&config, dir.path()).unwrap();
    assert!(report.cells.is_empty());
    assert!(report.aggregates.is_empty());
    let files = emit_report(&report, dir.path(), &[ReportFormat::Csv, ReportFormat::Json]).unwrap();
    assert!(!files.is_empty());
    // Header-only CSV.
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(
        csv,
        "method,world,demo_count,seed,evd_train,evd_transfer,objective\n"
    );
}

#[test]
fn single_cell_report_is_populated() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(vec![MethodConfig::new(MethodName::Linear)]);
    config.world.seeds = vec![3];
    config.demo_counts = vec![4];
    config.transfer = false;
    let report = run_experiment(&config, dir.path()).unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = &report.cells[0];
    assert_eq!(cell.status, CellStatus::Ok);
    assert_eq!(cell.method, "linear");
    assert!(cell.evd_train.is_some());
    assert!(cell.evd_transfer.is_none());
    assert!(cell.model_path.is_some());
    assert_eq!(report.aggregates.len(), 1);
    assert_eq!(report.aggregates[0].n, 1);
    assert_eq!(report.aggregates[0].std_train, Some(0.0));
}

#[test]
fn report_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(vec![MethodConfig::new(MethodName::Linear)]);
    let report = run_experiment(&config, dir.path()).unwrap();
    emit_report(&report, dir.path(), &[ReportFormat::Json]).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let back: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report, back);
}

#[test]
fn rerun_is_byte_identical_even_with_parallel_workers() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let mut config = tiny_config(vec![MethodConfig::new(MethodName::Linear), fast_gpirl()]);
    let r1 = run_experiment(&config, d1.path()).unwrap();
    emit_report(&r1, d1.path(), &[ReportFormat::Csv]).unwrap();
    config.workers = 2;
    let r2 = run_experiment(&config, d2.path()).unwrap();
    emit_report(&r2, d2.path(), &[ReportFormat::Csv]).unwrap();
    let a = std::fs::read(d1.path().join("results.csv")).unwrap();
    let b = std::fs::read(d2.path().join("results.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn transfer_worlds_never_share_training_seeds() {
    let config = tiny_config(vec![]);
    for &seed in &config.world.seeds {
        let t = transfer_seed(&config, seed);
        assert!(!config.world.seeds.contains(&t));
    }
}

#[test]
fn demo_sets_are_nested_across_sweep_levels() {
    let config = tiny_config(vec![]);
    let world = generate_world(&config.world, 0).unwrap();
    let policy = dgpirl_cli::runner::demo_policy(&world, DemoPolicy::Soft).unwrap();
    let full =
        dgpirl::mdp::sample_demonstrations(&world.mdp, &policy, 6, 8, 42).unwrap();
    let small = full.prefix(4);
    assert_eq!(small.trajectories[..], full.trajectories[..4]);
}

#[test]
fn model_files_reevaluate_to_recorded_evd() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(vec![MethodConfig::new(MethodName::Linear), fast_gpirl()]);
    let report = run_experiment(&config, dir.path()).unwrap();
    for cell in &report.cells {
        assert_eq!(cell.status, CellStatus::Ok, "{:?}", cell.error);
        let world = generate_world(&config.world, cell.seed).unwrap();
        let json = std::fs::read_to_string(cell.model_path.as_ref().unwrap()).unwrap();
        let model = AnyModel::from_json(&json).unwrap();
        let r = model.reward(&world.features).unwrap();
        let evd = evd_of_reward(&world.mdp, &world.true_reward, &r).unwrap();
        let recorded = cell.evd_train.unwrap();
        assert!(
            (evd - recorded).abs() <= 1e-10,
            "{} evd {evd} vs recorded {recorded}",
            cell.method
        );
    }
}

#[test]
fn per_cell_failures_do_not_abort_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(vec![fast_gpirl()]);
    // An absurd single-cell budget forces a timeout status.
    config.cell_budget_ms = 0;
    config.world.seeds = vec![0];
    config.demo_counts = vec![4];
    let report = run_experiment(&config, dir.path()).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert_eq!(report.cells[0].status, CellStatus::Timeout);
    assert!(report.cells[0].error.is_some());
    assert_eq!(report.aggregates[0].n, 0);
}

#[test]
fn svg_contains_one_series_per_method_with_legend_labels() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(vec![MethodConfig::new(MethodName::Linear), fast_gpirl()]);
    let report = run_experiment(&config, dir.path()).unwrap();
    emit_report(&report, dir.path(), &[ReportFormat::Csv]).unwrap();
    let svg = std::fs::read_to_string(dir.path().join("figures/training_evd.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(">linear</text>"));
    assert!(svg.contains(">gpirl</text>"));
    let legend_count = svg.matches("class=\"legend\"").count();
    assert_eq!(legend_count, 2);
}

#[test]
fn svg_renderer_handles_degenerate_inputs() {
    let svg = render_line_chart(
        "t",
        "x",
        "y",
        &[Series {
            name: "only".into(),
            points: vec![(4.0, 1.0, 0.0)],
        }],
    );
    assert!(svg.starts_with("<svg"));
    assert!(svg.ends_with("</svg>"));
}

#[test]
fn results_csv_matches_pinned_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(vec![MethodConfig::new(MethodName::Linear)]);
    config.world.seeds = vec![5];
    config.demo_counts = vec![4];
    let report = run_experiment(&config, dir.path()).unwrap();
    let csv = results_csv(&report);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,world,demo_count,seed,evd_train,evd_transfer,objective"
    );
    let row = lines.next().unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields.len(), 7);
    assert_eq!(fields[0], "linear");
    assert_eq!(fields[1], "binary_world");
    assert_eq!(fields[2], "4");
    assert_eq!(fields[3], "5");
    fields[4].parse::<f64>().unwrap();
    fields[5].parse::<f64>().unwrap();
    fields[6].parse::<f64>().unwrap();
}
