use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::csv::{format_decimal, records_table, Table};
use crate::dataset::{make_finite_dataset, FiniteDataset};
use crate::debias::{score_inference, InferenceMethod};
use crate::error::{Error, Result};
use crate::network::{sgd_train, DataSource, EpochControl, EpochRecord, MlpModel, TrainOutcome};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.tsv";
pub const JACCARD_FILE: &str = "jaccard.csv";
pub const MANIFEST_FORMAT: &str = "spurious-lab-manifest";

pub fn snapshot_file_name(epoch: usize) -> String {
    format!("model_epoch_{epoch}.snapshot")
}

/// Resolved configuration plus the library version that produced a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub library_version: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        let mut config = config.clone();
        config.output = None;
        Manifest {
            format: MANIFEST_FORMAT.to_string(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Schema(format!("{}: not a run manifest", path.display())));
        }
        m.config.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Trained model, its records and the finite dataset if one was used.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: MlpModel<f64>,
    pub outcome: TrainOutcome,
    pub dataset: Option<FiniteDataset>,
}

/// Training as configured, without touching the filesystem. `observer` sees
/// every epoch.
pub fn train_experiment(
    config: &ExperimentConfig,
    observer: &mut dyn FnMut(&MlpModel<f64>, &EpochRecord) -> Result<EpochControl>,
) -> Result<TrainedRun> {
    config.validate()?;
    let dataset = config
        .data
        .size
        .map(|size| make_finite_dataset(&config.task, size, config.data.seed))
        .transpose()?;
    let mut model = config.train.init_model::<f64>(&config.task)?;
    if let Some(mask) = config.input_mask() {
        model.set_input_mask(mask)?;
    }
    let source = match &dataset {
        Some(d) => DataSource::Finite(&d.samples),
        None => DataSource::Online,
    };
    let outcome = sgd_train(&mut model, &config.train, &config.task, source, &config.metrics, observer)?;
    Ok(TrainedRun {
        model,
        outcome,
        dataset,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub snapshots: Vec<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains and writes `manifest.json`, `metrics.csv`, snapshots and, for
/// finite data, `data.tsv` into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    config.validate()?;
    create_dir(out)?;
    let manifest_path = out.join(MANIFEST_FILE);
    fs::write(&manifest_path, Manifest::new(config).to_json()).map_err(|e| Error::io(&manifest_path, e))?;

    let every = config.snapshots.every;
    let mut snapshots = Vec::new();
    let save = |model: &MlpModel<f64>, epoch: usize, snapshots: &mut Vec<PathBuf>| -> Result<()> {
        let path = out.join(snapshot_file_name(epoch));
        model.save(&path)?;
        snapshots.push(path);
        Ok(())
    };
    let mut observer = |model: &MlpModel<f64>, r: &EpochRecord| -> Result<EpochControl> {
        if every > 0 && r.epoch % every == 0 {
            save(model, r.epoch, &mut snapshots)?;
        }
        Ok(EpochControl::Continue)
    };
    let run = train_experiment(config, &mut observer)?;

    if let Some(d) = &run.dataset {
        let path = out.join(DATA_FILE);
        let mut buf = Vec::new();
        d.write_tsv(&mut buf).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    let last = run.outcome.records.last().map_or(0, |r| r.epoch);
    if config.snapshots.last && !(every > 0 && last % every == 0) {
        save(&run.model, last, &mut snapshots)?;
    }
    records_table(&run.outcome.records).write(&out.join(METRICS_FILE))?;
    Ok(RunOutput {
        dir: out.to_path_buf(),
        records: run.outcome.records,
        stopped_early: run.outcome.stopped_early,
        snapshots,
    })
}

/// Snapshot files in a run directory as `(epoch, path)`, ascending.
pub fn list_snapshots(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(epoch) = name
            .strip_prefix("model_epoch_")
            .and_then(|s| s.strip_suffix(".snapshot"))
            .and_then(|s| s.parse().ok())
        {
            out.push((epoch, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub const JACCARD_COLUMNS: [&str; 5] = ["epoch", "method", "jaccard", "containment", "predicted"];

/// Scores every snapshot of a run with each inference method. KL ranking
/// compares each snapshot against the last one. `k` defaults to the true
/// minority size.
pub fn score_run_inference(
    dir: &Path,
    data: &FiniteDataset,
    methods: &[InferenceMethod],
    k: Option<usize>,
) -> Result<Table> {
    let snaps = list_snapshots(dir)?;
    let Some((_, last_path)) = snaps.last() else {
        return Err(Error::Schema(format!("{}: no model snapshots", dir.display())));
    };
    let late = MlpModel::<f64>::load(last_path)?;
    let mut table = Table::new(JACCARD_COLUMNS);
    for &method in methods {
        for (epoch, path) in &snaps {
            let model = MlpModel::<f64>::load(path)?;
            let s = score_inference(method, &model, Some(&late), &data.samples, k, *epoch)?;
            table.push(vec![
                s.epoch.to_string(),
                s.method.to_string(),
                format_decimal(s.jaccard),
                format_decimal(s.containment),
                s.predicted.to_string(),
            ])?;
        }
    }
    Ok(table)
}

/// Reads the run's `data.tsv` against the task in its manifest.
pub fn load_run_dataset(dir: &Path, data_path: Option<&Path>) -> Result<FiniteDataset> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    let path = data_path.map_or_else(|| dir.join(DATA_FILE), Path::to_path_buf);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    FiniteDataset::read_tsv(&manifest.config.task, manifest.config.data.seed, BufReader::new(f))
}
