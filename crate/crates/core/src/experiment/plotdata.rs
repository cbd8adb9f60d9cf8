//! Long-format `series,x,y,ci_low,ci_high` tables, one per plot kind.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::csv::{format_decimal, parse_optional, Table};
use super::run::{JACCARD_FILE, METRICS_FILE};
use super::sweep::{SUMMARY_FILE, SWEEP_FILE};
use crate::error::{Error, Result};
use crate::theory::optimal_spurious_margin;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Core and spurious correlation (raw and decoded) per epoch of one run.
    Correlations,
    /// Median epochs to threshold per spurious degree, one series per λ.
    Convergence,
    /// Decoded correlations per epoch, for one run or every run of a sweep.
    Decoded,
    /// Optimal spurious margin against the core margin, one series per λ.
    Margins,
    /// Jaccard score per epoch, one series per inference method.
    Jaccard,
}

impl Figure {
    pub const ALL: [Figure; 5] = [
        Figure::Correlations,
        Figure::Convergence,
        Figure::Decoded,
        Figure::Margins,
        Figure::Jaccard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Correlations => "correlations",
            Figure::Convergence => "convergence",
            Figure::Decoded => "decoded",
            Figure::Margins => "margins",
            Figure::Jaccard => "jaccard",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    /// Also accepts the numbered names `fig2`, `fig3`, `fig5`, `fig6`, `fig7`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let numbered = ["fig2", "fig3", "fig5", "fig6", "fig7"];
        Figure::ALL
            .iter()
            .zip(numbered)
            .find(|(f, alias)| f.name() == s || *alias == s)
            .map(|(f, _)| *f)
            .ok_or_else(|| {
                let names: Vec<&str> = Figure::ALL.iter().map(|f| f.name()).collect();
                Error::Parse(format!("unknown figure {s:?} (one of {})", names.join(", ")))
            })
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const PLOT_COLUMNS: [&str; 5] = ["series", "x", "y", "ci_low", "ci_high"];

/// `λ` values and core-margin grid used for the margin figure.
pub const MARGIN_LAMBDAS: [f64; 6] = [0.6, 0.7, 0.8, 0.9, 0.95, 0.99];
pub const MARGIN_GRID_STEP: f64 = 0.25;
pub const MARGIN_GRID_MAX: f64 = 10.0;

struct PlotTable(Table);

impl PlotTable {
    fn new() -> Self {
        PlotTable(Table::new(PLOT_COLUMNS))
    }

    fn point(&mut self, series: &str, x: &str, y: &str, ci: Option<(&str, &str)>) {
        let (lo, hi) = ci.unwrap_or(("", ""));
        self.0
            .rows
            .push(vec![series.into(), x.into(), y.into(), lo.into(), hi.into()]);
    }
}

fn epoch_series(metrics: &Table, columns: &[&str], prefix: &str, out: &mut PlotTable) -> Result<()> {
    let epochs = metrics.column("epoch")?;
    for col in columns {
        let values = metrics.column(col)?;
        for (e, v) in epochs.iter().zip(values) {
            if parse_optional(v)?.is_some() {
                out.point(&format!("{prefix}{col}"), e, v, None);
            }
        }
    }
    Ok(())
}

fn require(path: &Path) -> Result<Table> {
    if !path.exists() {
        return Err(Error::Schema(format!("{} is missing", path.display())));
    }
    Table::read(path)
}

/// Plot-ready table for `figure`. `input` is a run directory (correlations,
/// decoded, jaccard) or a sweep directory (convergence, decoded); margins are
/// computed directly and ignore it.
pub fn emit_plotdata(figure: Figure, input: Option<&Path>) -> Result<Table> {
    let need = || input.ok_or_else(|| Error::param(format!("{figure} needs an input directory")));
    let mut out = PlotTable::new();
    match figure {
        Figure::Correlations => {
            let m = require(&need()?.join(METRICS_FILE))?;
            epoch_series(
                &m,
                &["core_corr", "spurious_corr", "decoded_core", "decoded_spurious"],
                "",
                &mut out,
            )?;
        }
        Figure::Convergence => {
            let s = require(&need()?.join(SUMMARY_FILE))?;
            let (lambda, degree, median, q1, q3) = (
                s.column("lambda")?,
                s.column("spurious_degree")?,
                s.column("median")?,
                s.column("q1")?,
                s.column("q3")?,
            );
            for i in 0..s.rows.len() {
                out.point(&format!("lambda={}", lambda[i]), degree[i], median[i], Some((q1[i], q3[i])));
            }
        }
        Figure::Decoded => {
            let dir = need()?;
            let cols = ["decoded_core", "decoded_spurious"];
            if dir.join(SWEEP_FILE).exists() {
                let s = Table::read(&dir.join(SWEEP_FILE))?;
                let (run, lambda, degree, rep) = (
                    s.column("run")?,
                    s.column("lambda")?,
                    s.column("spurious_degree")?,
                    s.column("repetition")?,
                );
                for i in 0..s.rows.len() {
                    let path = dir.join(run[i]).join(METRICS_FILE);
                    if !path.exists() {
                        continue;
                    }
                    let prefix = format!("lambda={},degree={},rep={}:", lambda[i], degree[i], rep[i]);
                    epoch_series(&Table::read(&path)?, &cols, &prefix, &mut out)?;
                }
            } else {
                epoch_series(&require(&dir.join(METRICS_FILE))?, &cols, "", &mut out)?;
            }
        }
        Figure::Margins => {
            let steps = (MARGIN_GRID_MAX / MARGIN_GRID_STEP).round() as usize;
            for &lambda in &MARGIN_LAMBDAS {
                let series = format!("lambda={}", format_decimal(lambda));
                for i in 0..=steps {
                    let gc = i as f64 * MARGIN_GRID_STEP;
                    let gs = optimal_spurious_margin(gc, lambda, 1e-10)?;
                    out.point(&series, &format_decimal(gc), &format_decimal(gs), None);
                }
            }
        }
        Figure::Jaccard => {
            let j = require(&need()?.join(JACCARD_FILE))?;
            let (epoch, method, jac, cont) = (
                j.column("epoch")?,
                j.column("method")?,
                j.column("jaccard")?,
                j.column("containment")?,
            );
            for i in 0..j.rows.len() {
                out.point(&format!("jaccard:{}", method[i]), epoch[i], jac[i], None);
            }
            for i in 0..j.rows.len() {
                out.point(&format!("containment:{}", method[i]), epoch[i], cont[i], None);
            }
        }
    }
    Ok(out.0)
}
