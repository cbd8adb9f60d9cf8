use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepCell};
use super::csv::{format_decimal, Table};
use super::run::run_experiment;
use crate::error::{Error, Result};
use crate::metrics::{epochs_to_threshold, RecordMetric};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const THREADS_ENV: &str = "SPURIOUS_LAB_THREADS";

pub fn run_dir_name(index: usize) -> String {
    format!("run_{index:04}")
}

/// Outcome of one sweep run; `error` is set when the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub lambda: f64,
    pub spurious_degree: usize,
    pub repetition: usize,
    pub seed: u64,
    pub epochs_to_threshold: Option<usize>,
    pub epochs_run: usize,
    pub final_core_corr: f64,
    pub final_spurious_corr: f64,
    pub error: Option<String>,
}

/// Median and quartiles of `epochs_to_threshold` for one `(λ, degree)` cell.
/// Runs that never reach the threshold count as infinitely slow, so a
/// statistic landing on them is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub lambda: f64,
    pub spurious_degree: usize,
    pub runs: usize,
    pub reached: usize,
    pub failed: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

/// Worker count from `SPURIOUS_LAB_THREADS`, else the available parallelism.
pub fn sweep_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Configuration(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Linear-interpolation quantile of sorted values (infinite entries allowed).
fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let v = if lo == hi {
        sorted[lo]
    } else {
        let t = pos - lo as f64;
        sorted[lo] + t * (sorted[hi] - sorted[lo])
    };
    v.is_finite().then_some(v)
}

fn run_cell(cell: &SweepCell, out: &Path, metric: RecordMetric, threshold: f64) -> SweepRow {
    let mut row = SweepRow {
        index: cell.index,
        lambda: cell.lambda,
        spurious_degree: cell.spurious_degree,
        repetition: cell.repetition,
        seed: cell.config.train.seed,
        epochs_to_threshold: None,
        epochs_run: 0,
        final_core_corr: f64::NAN,
        final_spurious_corr: f64::NAN,
        error: None,
    };
    let result = run_experiment(&cell.config, &out.join(run_dir_name(cell.index))).and_then(|run| {
        let conv = epochs_to_threshold(&run.records, metric, threshold)?;
        Ok((run, conv))
    });
    match result {
        Ok((run, conv)) => {
            let last = run.records.last().expect("at least one epoch");
            row.epochs_to_threshold = conv.epoch();
            row.epochs_run = last.epoch;
            row.final_core_corr = last.core_corr;
            row.final_spurious_corr = last.spurious_corr;
        }
        Err(e) => {
            log::warn!("sweep run {} failed: {e}", cell.index);
            row.error = Some(e.to_string());
        }
    }
    row
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(l, d)| l == r.lambda && d == r.spurious_degree) {
            keys.push((r.lambda, r.spurious_degree));
        }
    }
    keys.into_iter()
        .map(|(lambda, degree)| {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.lambda == lambda && r.spurious_degree == degree)
                .collect();
            let ok: Vec<&&SweepRow> = cell.iter().filter(|r| r.error.is_none()).collect();
            let mut values: Vec<f64> = ok
                .iter()
                .map(|r| r.epochs_to_threshold.map_or(f64::INFINITY, |e| e as f64))
                .collect();
            values.sort_by(f64::total_cmp);
            SummaryRow {
                lambda,
                spurious_degree: degree,
                runs: cell.len(),
                reached: ok.iter().filter(|r| r.epochs_to_threshold.is_some()).count(),
                failed: cell.len() - ok.len(),
                median: quantile(&values, 0.5),
                q1: quantile(&values, 0.25),
                q3: quantile(&values, 0.75),
            }
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "run",
    "lambda",
    "spurious_degree",
    "repetition",
    "seed",
    "epochs_to_threshold",
    "epochs_run",
    "final_core_corr",
    "final_spurious_corr",
    "error",
];

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "lambda",
    "spurious_degree",
    "runs",
    "reached",
    "failed",
    "median",
    "q1",
    "q3",
];

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(SWEEP_COLUMNS);
    for r in rows {
        t.rows.push(vec![
            run_dir_name(r.index),
            format_decimal(r.lambda),
            r.spurious_degree.to_string(),
            r.repetition.to_string(),
            r.seed.to_string(),
            r.epochs_to_threshold.map_or_else(String::new, |e| e.to_string()),
            r.epochs_run.to_string(),
            format_decimal(r.final_core_corr),
            format_decimal(r.final_spurious_corr),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

pub fn summary_table(rows: &[SummaryRow]) -> Table {
    let opt = |v: Option<f64>| v.map_or_else(String::new, format_decimal);
    let mut t = Table::new(SUMMARY_COLUMNS);
    for r in rows {
        t.rows.push(vec![
            format_decimal(r.lambda),
            r.spurious_degree.to_string(),
            r.runs.to_string(),
            r.reached.to_string(),
            r.failed.to_string(),
            opt(r.median),
            opt(r.q1),
            opt(r.q3),
        ]);
    }
    t
}

/// Runs every cell of `config.sweep` in its own `run_<i>/` directory on a
/// bounded pool, then writes `sweep.csv` and `summary.csv`. Runs never share
/// state, so each matches a stand-alone run of its manifest. Failed runs are
/// recorded in the `error` column and the sweep continues.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepOutput> {
    config.validate()?;
    let axes = config.sweep.clone().unwrap_or_default();
    let cells = config.sweep_cells()?;
    let threads = sweep_threads()?;
    log::info!("sweep: {} runs on {threads} worker(s)", cells.len());
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Resource(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cell, out, axes.metric, axes.threshold))
            .collect()
    });
    let summary = summarize(&rows);
    sweep_table(&rows).write(&out.join(SWEEP_FILE))?;
    summary_table(&summary).write(&out.join(SUMMARY_FILE))?;
    Ok(SweepOutput {
        dir: out.to_path_buf(),
        rows,
        summary,
    })
}
