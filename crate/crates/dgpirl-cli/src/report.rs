//! Experiment report structures and machine-readable emission: CSV, JSON,
//! plot-ready per-method series, and SVG figure analogs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::svg::{render_line_chart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub world: String,
    pub demo_count: usize,
    pub seed: u64,
    pub status: CellStatus,
    pub evd_train: Option<f64>,
    pub evd_transfer: Option<f64>,
    pub objective: Option<f64>,
    /// Fraction of occupancy mass on rule-violating states under the
    /// learned policy (highway worlds only).
    pub speeding_prob: Option<f64>,
    pub wall_ms: u64,
    pub model_path: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub demo_count: usize,
    /// Number of seeds that completed.
    pub n: usize,
    pub mean_train: Option<f64>,
    pub std_train: Option<f64>,
    pub mean_transfer: Option<f64>,
    pub std_transfer: Option<f64>,
}

pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `results.csv`: the deterministic per-cell table. Wall-clock timings are
/// inherently non-reproducible, so they live in `timings.csv` instead and
/// the results file stays byte-identical across re-runs.
pub fn results_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("method,world,demo_count,seed,evd_train,evd_transfer,objective\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.method,
            c.world,
            c.demo_count,
            c.seed,
            opt(c.evd_train),
            opt(c.evd_transfer),
            opt(c.objective)
        );
    }
    out
}

pub fn timings_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("method,world,demo_count,seed,wall_ms\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.method, c.world, c.demo_count, c.seed, c.wall_ms
        );
    }
    out
}

/// Per-method plot series: one row per demo count with mean and standard
/// deviation columns, directly consumable by any plotting tool.
pub fn plot_csv(report: &ExperimentReport, method: &str) -> String {
    let mut out = String::from("demo_count,mean_train,std_train,mean_transfer,std_transfer\n");
    for a in report.aggregates.iter().filter(|a| a.method == method) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            a.demo_count,
            opt(a.mean_train),
            opt(a.std_train),
            opt(a.mean_transfer),
            opt(a.std_transfer)
        );
    }
    out
}

fn series_for(report: &ExperimentReport, transfer: bool) -> Vec<Series> {
    let mut methods: Vec<String> = Vec::new();
    for a in &report.aggregates {
        if !methods.contains(&a.method) {
            methods.push(a.method.clone());
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let points = report
                .aggregates
                .iter()
                .filter(|a| a.method == m)
                .filter_map(|a| {
                    let (mean, std) = if transfer {
                        (a.mean_transfer, a.std_transfer)
                    } else {
                        (a.mean_train, a.std_train)
                    };
                    mean.map(|mu| (a.demo_count as f64, mu, std.unwrap_or(0.0)))
                })
                .collect();
            Series { name: m, points }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Write the report artifacts under `out_dir` and return the paths written.
pub fn emit_report(
    report: &ExperimentReport,
    out_dir: &Path,
    formats: &[ReportFormat],
) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    fs::create_dir_all(out_dir)
        .map_err(|e| anyhow::anyhow!("creating {}: {e}", out_dir.display()))?;
    for f in formats {
        match f {
            ReportFormat::Csv => {
                let p = out_dir.join("results.csv");
                fs::write(&p, results_csv(report))
                    .map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?;
                written.push(p);
                let p = out_dir.join("timings.csv");
                fs::write(&p, timings_csv(report))
                    .map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?;
                written.push(p);

                let plot_dir = out_dir.join("plotdata");
                fs::create_dir_all(&plot_dir)?;
                let mut methods: Vec<String> = Vec::new();
                for a in &report.aggregates {
                    if !methods.contains(&a.method) {
                        methods.push(a.method.clone());
                    }
                }
                for m in &methods {
                    let p = plot_dir.join(format!("{m}.csv"));
                    fs::write(&p, plot_csv(report, m))
                        .map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?;
                    written.push(p);
                }

                let fig_dir = out_dir.join("figures");
                fs::create_dir_all(&fig_dir)?;
                let world = report
                    .cells
                    .first()
                    .map(|c| c.world.clone())
                    .unwrap_or_else(|| report.config.world.generator.label().to_string());
                let p = fig_dir.join("training_evd.svg");
                fs::write(
                    &p,
                    render_line_chart(
                        &format!("training EVD - {world}"),
                        "demonstrations",
                        "EVD",
                        &series_for(report, false),
                    ),
                )?;
                written.push(p);
                if report.config.transfer {
                    let p = fig_dir.join("transfer_evd.svg");
                    fs::write(
                        &p,
                        render_line_chart(
                            &format!("transfer EVD - {world}"),
                            "demonstrations",
                            "EVD",
                            &series_for(report, true),
                        ),
                    )?;
                    written.push(p);
                }
            }
            ReportFormat::Json => {
                let p = out_dir.join("report.json");
                fs::write(&p, serde_json::to_string_pretty(report)?)
                    .map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
