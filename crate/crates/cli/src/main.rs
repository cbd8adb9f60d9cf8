use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spurious_lab::boolfn::{fourier_coefficient, FeatureKind, FeatureSpec, FourierMode};
use spurious_lab::dataset::{make_finite_dataset, FeatureTarget};
use spurious_lab::debias::InferenceMethod;
use spurious_lab::experiment::csv::{format_decimal, Table};
use spurious_lab::experiment::{
    emit_plotdata, load_run_dataset, load_task_config, run_experiment, run_sweep, score_run_inference,
    ExperimentConfig, Figure, JACCARD_FILE,
};
use spurious_lab::metrics::{self, CorrelationMode, DEFAULT_NEURON_MARGIN};
use spurious_lab::probe::{decoded_correlation, ProbeReg, DEFAULT_PROBE_SAMPLES};
use spurious_lab::theory::theory_report;
use spurious_lab::{Error, Mlp};

#[derive(Parser)]
#[command(name = "spurious-lab", version, about = "Boolean spurious-correlation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a finite dataset and write it as TSV.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configured run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlations, group accuracies and neuron classes of a snapshot.
    Metrics(MetricsArgs),
    /// Decoded correlation of a snapshot's hidden representation.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        target: FeatureTarget,
        /// Probe fit and evaluation size.
        #[arg(long, default_value_t = DEFAULT_PROBE_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// L1 penalty strength; L2 with strength 1 is used otherwise.
        #[arg(long, conflicts_with = "l2")]
        l1: Option<f64>,
        #[arg(long)]
        l2: Option<f64>,
    },
    /// Closed-form quantities for one setting.
    Theory {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        c: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long = "gamma-c", default_value_t = 3.0)]
        gamma_c: f64,
        #[arg(long)]
        json: bool,
    },
    /// Fourier coefficient of a feature on one subset (1-based coordinates).
    Fourier {
        #[arg(long = "fn")]
        kind: FeatureKind,
        #[arg(long)]
        d: usize,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        set: Vec<usize>,
        /// Monte-Carlo sample count; exact enumeration when absent.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score minority-group inference on every snapshot of a run.
    Debias {
        #[arg(long)]
        run: PathBuf,
        /// Dataset the run trained on; defaults to the run's data.tsv.
        #[arg(long)]
        data: Option<PathBuf>,
        /// jtt, ce, kl, cluster or all; may be repeated.
        #[arg(long, default_value = "all")]
        method: Vec<String>,
        /// Size of top-k rankings: `auto` uses the true minority size.
        #[arg(long, default_value = "auto")]
        k: String,
        /// Output CSV; defaults to jaccard.csv inside the run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of the config's sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready long-format CSV: correlations, convergence, decoded, margins or jaccard.
    Plotdata {
        #[arg(long)]
        figure: Figure,
        /// Run or sweep directory.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Enumerate all inputs instead of sampling.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_NEURON_MARGIN)]
    margin: f64,
    /// Append the row to this CSV instead of printing it.
    #[arg(long)]
    append: Option<PathBuf>,
}

fn write_or_print(table: &Table, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(p) => table.write(p),
        None => {
            print!("{}", table.to_csv_string());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { config, size, seed, out } => {
            let task = load_task_config(&config)?;
            let data = make_finite_dataset(&task, size, seed)?;
            let mut buf = Vec::new();
            data.write_tsv(&mut buf).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            fs::write(&out, buf).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            eprintln!("wrote {size} samples ({} minority) to {}", data.minority_indices().len(), out.display());
        }
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Configuration("no output directory: pass --out or set `output`".into()))?;
            let run = run_experiment(&cfg, &out)?;
            if let Some(r) = run.records.last() {
                eprintln!(
                    "{} epochs, core {}, spurious {}{}",
                    r.epoch,
                    format_decimal(r.core_corr),
                    format_decimal(r.spurious_corr),
                    if run.stopped_early { " (stopped early)" } else { "" }
                );
            }
        }
        Command::Metrics(a) => {
            let task = load_task_config(&a.config)?;
            let model = Mlp::load(&a.model)?;
            let mode = if a.exact {
                CorrelationMode::Exact
            } else {
                CorrelationMode::MonteCarlo {
                    samples: a.samples,
                    seed: a.seed,
                }
            };
            let corr = metrics::correlations(&model, &task, mode)?;
            let groups = metrics::group_accuracies(&model, &task, a.samples, a.seed)?;
            let part = metrics::classify_neurons(&model, &task, a.margin)?;
            let mut t = Table::new([
                "model",
                "core_corr",
                "core_se",
                "spurious_corr",
                "spurious_se",
                "worst_group_acc",
                "mean_group_acc",
                "spurious_neurons",
                "core_neurons",
                "other_neurons",
            ]);
            let sp = corr.spurious.map_or((f64::NAN, f64::NAN), |e| (e.value, e.std_error));
            t.push(vec![
                a.model.display().to_string(),
                format_decimal(corr.core.value),
                format_decimal(corr.core.std_error),
                format_decimal(sp.0),
                format_decimal(sp.1),
                format_decimal(groups.worst()),
                format_decimal(groups.mean()),
                part.spurious.len().to_string(),
                part.core.len().to_string(),
                part.other.len().to_string(),
            ])?;
            match a.append {
                Some(p) => t.append_to(&p)?,
                None => print!("{}", t.to_csv_string()),
            }
        }
        Command::Decode {
            model,
            config,
            target,
            samples,
            seed,
            l1,
            l2,
        } => {
            let task = load_task_config(&config)?;
            let model = Mlp::load(&model)?;
            let reg = match (l1, l2) {
                (Some(s), _) => ProbeReg::l1(s),
                (None, Some(s)) => ProbeReg::l2(s),
                (None, None) => ProbeReg::default(),
            };
            let v = decoded_correlation(&model, &task, target, samples, samples, &reg, seed)?;
            println!("{}", format_decimal(v));
        }
        Command::Theory {
            n,
            s,
            c,
            lambda,
            gamma_c,
            json,
        } => {
            let report = theory_report(n, s, c, lambda, gamma_c)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Fourier {
            kind,
            d,
            set,
            samples,
            seed,
        } => {
            let f = FeatureSpec::new(kind, d, 0, d)?;
            if let Some(&bad) = set.iter().find(|&&i| i == 0 || i > d) {
                return Err(Error::Parameter(format!("coordinate {bad} is outside 1..={d}")));
            }
            let subset: Vec<usize> = set.iter().map(|i| i - 1).collect();
            let mode = match samples {
                Some(samples) => FourierMode::MonteCarlo { samples, seed },
                None => FourierMode::Exact,
            };
            let est = fourier_coefficient(|x| f.eval_unchecked(x), d, &subset, mode)?;
            if samples.is_some() {
                println!("{} ± {}", format_decimal(est.value), format_decimal(est.std_error));
            } else {
                println!("{}", format_decimal(est.value));
            }
        }
        Command::Debias {
            run,
            data,
            method,
            k,
            out,
        } => {
            let mut methods = Vec::new();
            for m in &method {
                if m == "all" {
                    methods.extend(InferenceMethod::ALL);
                } else {
                    methods.push(m.parse::<InferenceMethod>()?);
                }
            }
            methods.dedup();
            let k = match k.as_str() {
                "auto" => None,
                v => Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("--k must be `auto` or a count, got {v:?}")))?,
                ),
            };
            let dataset = load_run_dataset(&run, data.as_deref())?;
            let table = score_run_inference(&run, &dataset, &methods, k)?;
            let out = out.unwrap_or_else(|| run.join(JACCARD_FILE));
            table.write(&out)?;
            for m in &methods {
                let best = table
                    .rows
                    .iter()
                    .filter(|r| r[1] == m.name())
                    .filter_map(|r| r[2].parse::<f64>().ok())
                    .fold(f64::NEG_INFINITY, f64::max);
                eprintln!("{m}: max jaccard {}", format_decimal(best));
            }
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Configuration("no output directory: pass --out or set `output`".into()))?;
            eprintln!("sweep: {} runs", cfg.sweep_cells()?.len());
            let res = run_sweep(&cfg, &out)?;
            let failed = res.rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("sweep finished: {} runs, {failed} failed", res.rows.len());
        }
        Command::Plotdata { figure, input, out } => {
            let t = emit_plotdata(figure, input.as_deref())?;
            write_or_print(&t, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
