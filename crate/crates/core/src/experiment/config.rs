use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Block, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricPlan, RecordMetric};
use crate::network::TrainConfig;
use crate::rng;

/// Training data: fresh draws every batch, or a fixed sample of `size` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `None` trains online.
    pub size: Option<usize>,
    pub seed: u64,
}

/// Which epochs get a `model_epoch_<k>.snapshot` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotPlan {
    /// Every this many epochs; 0 disables periodic snapshots.
    pub every: usize,
    /// Always snapshot the last trained epoch.
    pub last: bool,
}

impl Default for SnapshotPlan {
    fn default() -> Self {
        SnapshotPlan { every: 0, last: true }
    }
}

/// Axes of a sweep. Empty lists keep the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub lambdas: Vec<f64>,
    /// Degree of the spurious feature; the spurious block is resized to the
    /// degree and the noise block absorbs the difference, so `n` stays fixed.
    /// 0 removes the spurious block, which forces `λ = 0.5`.
    pub spurious_degrees: Vec<usize>,
    pub repetitions: usize,
    /// The convergence column reports the first epoch `metric ≥ threshold`.
    pub metric: RecordMetric,
    pub threshold: f64,
}

impl Default for SweepAxes {
    fn default() -> Self {
        SweepAxes {
            lambdas: Vec::new(),
            spurious_degrees: Vec::new(),
            repetitions: 1,
            metric: RecordMetric::CoreCorr,
            threshold: 0.95,
        }
    }
}

/// One experiment: the task, the optimizer, what to measure and where to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: SpuriousTaskConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricPlan,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub snapshots: SnapshotPlan,
    /// Blocks the first layer may read; the rest are masked to zero weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_blocks: Option<Vec<Block>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(task: SpuriousTaskConfig, train: TrainConfig) -> Self {
        ExperimentConfig {
            task,
            train,
            metrics: MetricPlan::default(),
            data: DataConfig::default(),
            snapshots: SnapshotPlan::default(),
            visible_blocks: None,
            sweep: None,
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Configuration(m) => Error::Configuration(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Configuration(_) => e,
            other => Error::Configuration(other.to_string()),
        };
        self.task.validate().map_err(cfg_err)?;
        self.train.validate()?;
        if self.data.size == Some(0) {
            return Err(Error::Configuration("data.size must be positive".into()));
        }
        if let Some(blocks) = &self.visible_blocks {
            if blocks.is_empty() {
                return Err(Error::Configuration("visible_blocks must name at least one block".into()));
            }
        }
        if let Some(axes) = &self.sweep {
            if axes.repetitions == 0 {
                return Err(Error::Configuration("sweep.repetitions must be positive".into()));
            }
            if !axes.threshold.is_finite() {
                return Err(Error::Configuration("sweep.threshold must be finite".into()));
            }
            for cell in self.sweep_cells()? {
                cell.config.task.validate().map_err(cfg_err)?;
            }
        }
        Ok(())
    }

    /// First-layer input mask implied by `visible_blocks`.
    pub fn input_mask(&self) -> Option<Vec<bool>> {
        let blocks = self.visible_blocks.as_ref()?;
        let mut mask = vec![false; self.task.n()];
        for &b in blocks {
            for i in self.task.block(b) {
                mask[i] = true;
            }
        }
        Some(mask)
    }

    /// Every run of the sweep in launch order, with its resolved single-run
    /// config. Seeds derive from the base seeds and the axis indices.
    pub fn sweep_cells(&self) -> Result<Vec<SweepCell>> {
        let axes = self.sweep.clone().unwrap_or_default();
        let lambdas = if axes.lambdas.is_empty() {
            vec![self.task.lambda]
        } else {
            axes.lambdas.clone()
        };
        let base_degree = self
            .task
            .spurious_feature()
            .map_or(0, |f| f.degree);
        let degrees = if axes.spurious_degrees.is_empty() {
            vec![base_degree]
        } else {
            axes.spurious_degrees.clone()
        };
        let n = self.task.n();
        let c = self.task.core_len;
        let mut cells = Vec::with_capacity(lambdas.len() * degrees.len() * axes.repetitions);
        for (li, &lambda) in lambdas.iter().enumerate() {
            for (di, &degree) in degrees.iter().enumerate() {
                for rep in 0..axes.repetitions {
                    let mut cfg = self.clone();
                    cfg.sweep = None;
                    cfg.output = None;
                    cfg.task.lambda = lambda;
                    if !axes.spurious_degrees.is_empty() {
                        if c + degree > n {
                            return Err(Error::Configuration(format!(
                                "spurious degree {degree} does not fit next to a core block of {c} in n = {n}"
                            )));
                        }
                        cfg.task.spurious_len = degree;
                        cfg.task.noise_len = n - c - degree;
                        cfg.task.spurious.degree = None;
                        if degree == 0 {
                            cfg.task.lambda = 0.5;
                        }
                    }
                    let path = [li as u64, di as u64, rep as u64];
                    cfg.train.seed = rng::derive_seed(self.train.seed, &path);
                    cfg.data.seed = rng::derive_seed(self.data.seed, &path);
                    cells.push(SweepCell {
                        index: cells.len(),
                        lambda,
                        spurious_degree: degree,
                        repetition: rep,
                        config: cfg,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// Task definition from a TOML file holding either the task keys at top level
/// or a full experiment config with a `[task]` table.
pub fn load_task_config(path: &Path) -> Result<SpuriousTaskConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = |m: String| Error::Configuration(format!("{}: {m}", path.display()));
    let doc: toml::Table = toml::from_str(&text).map_err(|e| ctx(e.to_string()))?;
    let task = if doc.contains_key("task") {
        ExperimentConfig::from_toml(&text).map_err(|e| ctx(e.to_string()))?.task
    } else {
        let t: SpuriousTaskConfig = toml::from_str(&text).map_err(|e| ctx(e.to_string()))?;
        t.validate().map_err(|e| ctx(e.to_string()))?;
        t
    };
    Ok(task)
}

/// One run of a sweep. `lambda` is the axis value; the resolved task uses 0.5
/// when the spurious block is removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub lambda: f64,
    pub spurious_degree: usize,
    pub repetition: usize,
    pub config: ExperimentConfig,
}
