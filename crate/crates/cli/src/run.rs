//! Experiment execution, per-replicate reports and the aggregate table.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use prnpe_core::pipeline::{aggregate, run_replicate, MethodKind, ReplicateMetrics, ReplicateReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;

/// Significant digits kept for every float written to a report or table.
pub const DIGITS: usize = 12;

/// Round to `DIGITS` significant digits. Non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", DIGITS - 1, x).parse().expect("formatted float")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64 number"));
            *v = serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null);
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(m) => m.values_mut().for_each(round_value),
        _ => {}
    }
}

/// JSON text with floats rounded; non-finite floats become `null`.
pub fn to_rounded_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

/// Contents of `<outdir>/<task>/<method>/<seed>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: RunConfig,
    pub status: Status,
    pub error: Option<String>,
    pub report: Option<ReplicateReport>,
}

/// One row of `summary.csv`, for the task's focus parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub method: String,
    pub parameter: usize,
    pub pseudo_truth: f64,
    pub replicates: usize,
    pub failed: usize,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    pub coverage: Option<f64>,
    pub log_ppd_mean: Option<f64>,
    pub log_ppd_sd: Option<f64>,
    pub log_ppd_median: Option<f64>,
}

/// Result of a whole run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub task_dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    /// `(method, seed, error)` for every failed replicate.
    pub failures: Vec<(MethodKind, u64, String)>,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

type MethodRuns = Vec<(MethodKind, std::result::Result<ReplicateReport, String>)>;

/// Run every method on every replicate, writing reports as replicates finish
/// and the aggregate table at the end. `cfg.output_dir` must be resolved.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone().context("output directory is not resolved")?;
    let task = cfg.build_task();
    let task_dir = out.join(task.name());
    for m in &cfg.methods {
        fs::create_dir_all(task_dir.join(m.name())).with_context(|| format!("creating {}", task_dir.display()))?;
    }
    let pipeline = cfg.pipeline();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let seeds = cfg.seeds();
    let per_seed: Vec<Result<MethodRuns>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                log::info!("{} seed {seed}: start", task.name());
                let runs = match run_replicate(task.as_ref(), &cfg.methods, &pipeline, seed) {
                    Ok(runs) => runs
                        .into_iter()
                        .map(|(m, r)| (m, r.and_then(|r| r.report(task.as_ref())).map_err(|e| e.to_string())))
                        .collect(),
                    Err(e) => cfg.methods.iter().map(|&m| (m, Err(e.to_string()))).collect::<Vec<_>>(),
                };
                for (m, r) in &runs {
                    let file = ReportFile {
                        config: cfg.clone(),
                        status: if r.is_ok() { Status::Ok } else { Status::Failed },
                        error: r.as_ref().err().cloned(),
                        report: r.as_ref().ok().cloned(),
                    };
                    let path = task_dir.join(m.name()).join(format!("{seed}.json"));
                    fs::write(&path, to_rounded_json(&file)?).with_context(|| format!("writing {}", path.display()))?;
                }
                log::info!("{} seed {seed}: done", task.name());
                Ok(runs)
            })
            .collect()
    });

    let truth = task.pseudo_truth();
    let focus = task.focus_parameter();
    let mut per_method: Vec<(MethodKind, Vec<ReplicateMetrics>)> = cfg.methods.iter().map(|&m| (m, Vec::new())).collect();
    let mut failures = Vec::new();
    for (seed, runs) in seeds.iter().zip(per_seed) {
        for (j, (m, r)) in runs?.into_iter().enumerate() {
            match r {
                Ok(report) => per_method[j].1.push(report.metrics),
                Err(e) => failures.push((m, *seed, e)),
            }
        }
    }
    let mut rows = Vec::new();
    for (m, reps) in &per_method {
        let agg = if reps.is_empty() { None } else { Some(aggregate(reps, &truth)?) };
        let mut ppd: Vec<f64> = reps.iter().filter_map(|r| r.log_ppd).collect();
        rows.push(SummaryRow {
            task: task.name().to_string(),
            method: m.name().to_string(),
            parameter: focus,
            pseudo_truth: round_sig(truth[focus]),
            replicates: seeds.len(),
            failed: seeds.len() - reps.len(),
            bias: agg.as_ref().map(|a| round_sig(a.bias[focus])),
            rmse: agg.as_ref().map(|a| round_sig(a.rmse[focus])),
            coverage: agg.as_ref().map(|a| round_sig(a.coverage[focus])),
            log_ppd_mean: agg.as_ref().and_then(|a| a.log_ppd_mean).map(round_sig),
            log_ppd_sd: agg.as_ref().and_then(|a| a.log_ppd_sd).map(round_sig),
            log_ppd_median: median(&mut ppd).map(round_sig),
        });
    }
    write_summary(&task_dir.join("summary.csv"), &rows)?;
    Ok(RunOutcome { task_dir, rows, failures })
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
