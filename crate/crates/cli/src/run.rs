//! Learning-curve experiments: curves CSV and summary JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use geoal_core::engine::{run_experiment, sign_test, BandPoint, ExperimentResult, PreparedDataset};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub mean_aulc: f64,
    pub aulc: Vec<f64>,
    pub band: Vec<BandPoint>,
}

/// Paired comparison of two strategies over the shared repeats.
#[derive(Debug, Clone, Serialize)]
pub struct Ordering {
    pub better: String,
    pub worse: String,
    pub mean_aulc_better: f64,
    pub mean_aulc_worse: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "better beats worse".
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub metric: String,
    pub budget: usize,
    pub repeats: usize,
    pub seed: u64,
    pub strategies: Vec<StrategySummary>,
    pub ordering: Vec<Ordering>,
}

/// Runs every configured strategy on the same prepared dataset and seeds.
pub fn run_experiments(config: &RunConfig, base: &Path) -> Result<Vec<ExperimentResult>, CliError> {
    config.validate()?;
    let engine = config.engine();
    let dataset = config.dataset.load(base)?;
    let prepared = Arc::new(PreparedDataset::new(dataset, engine.neighbors, config.seed)?);
    config
        .strategies
        .iter()
        .map(|&s| {
            log::info!("running {s} x{}", config.repeats);
            Ok(run_experiment(&prepared, s, &engine, config.repeats, config.seed)?)
        })
        .collect()
}

pub fn curves_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from("strategy,repeat,inputs,metric,value\n");
    for r in results {
        for (repeat, curve) in r.curves.iter().enumerate() {
            for p in curve {
                writeln!(out, "{},{repeat},{},{},{}", r.strategy, p.inputs, r.metric, p.value).expect("string write");
            }
        }
    }
    out
}

pub fn summarize(config: &RunConfig, results: &[ExperimentResult]) -> Result<Summary, CliError> {
    let first = results.first().ok_or_else(|| CliError::Usage("no strategies".into()))?;
    let strategies = results
        .iter()
        .map(|r| StrategySummary {
            strategy: r.strategy.to_string(),
            mean_aulc: r.mean_aulc(),
            aulc: r.aulc.clone(),
            band: r.band(),
        })
        .collect();
    let mut ordering = Vec::new();
    for (i, a) in results.iter().enumerate() {
        for b in &results[i + 1..] {
            let (better, worse) = if b.mean_aulc() > a.mean_aulc() { (b, a) } else { (a, b) };
            let t = sign_test(&better.aulc, &worse.aulc)?;
            ordering.push(Ordering {
                better: better.strategy.to_string(),
                worse: worse.strategy.to_string(),
                mean_aulc_better: better.mean_aulc(),
                mean_aulc_worse: worse.mean_aulc(),
                wins: t.wins,
                losses: t.losses,
                ties: t.ties,
                p_value: t.p_value,
            });
        }
    }
    Ok(Summary {
        metric: first.metric.to_string(),
        budget: first.budget,
        repeats: config.repeats,
        seed: config.seed,
        strategies,
        ordering,
    })
}

/// Runs the experiment and writes both outputs into `out`, after all
/// repeats have finished. Returns the curves CSV path.
pub fn write_run(config: &RunConfig, base: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let results = run_experiments(config, base)?;
    let summary = summarize(config, &results)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let csv_path = out.join(CURVES_FILE);
    fs::write(&csv_path, curves_csv(&results)).map_err(|e| CliError::io(&csv_path, e))?;
    let summary_path = out.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json + "\n").map_err(|e| CliError::io(&summary_path, e))?;
    Ok(csv_path)
}
