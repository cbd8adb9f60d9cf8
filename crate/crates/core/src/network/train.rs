use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::BatchWorkspace;
use super::model::{InitScheme, MlpModel, ModelGrad};
use crate::dataset::{LabeledSample, SpuriousSampler, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricPlan};
use crate::rng::{self, tag};
use crate::scalar::Scalar;

/// Optimizer and architecture settings for [`sgd_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fresh samples drawn per epoch in online mode; ignored for finite datasets.
    pub samples_per_epoch: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub width: usize,
    pub depth: usize,
    pub init: InitScheme,
    pub train_output_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.5,
            batch_size: 64,
            epochs: 100,
            samples_per_epoch: 10_000,
            weight_decay: 0.0,
            seed: 0,
            width: 100,
            depth: 2,
            init: InitScheme::StandardUniform,
            train_output_bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Configuration(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.samples_per_epoch == 0 || self.width == 0 {
            return bad("batch_size, samples_per_epoch and width must be positive");
        }
        if self.depth < 2 {
            return bad("depth must be at least 2");
        }
        Ok(())
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        vec![self.width; self.depth - 1]
    }

    /// Fresh model drawn from the `(seed, INIT)` stream. The symmetric bias grid
    /// uses the core block length.
    pub fn init_model<T: Scalar>(&self, task: &SpuriousTaskConfig) -> Result<MlpModel<T>> {
        self.validate()?;
        let mut r = rng::stream(self.seed, &[tag::INIT]);
        MlpModel::init(task.n(), &self.hidden_widths(), self.init, task.core_len, &mut r)
    }

    /// Gradient steps in one epoch.
    pub fn steps_per_epoch(&self, source: &DataSource<'_>) -> usize {
        let samples = match source {
            DataSource::Online => self.samples_per_epoch,
            DataSource::Finite(data) => data.len(),
        };
        samples.div_ceil(self.batch_size)
    }
}

/// Where training batches come from.
#[derive(Debug, Clone, Copy)]
pub enum DataSource<'a> {
    /// Fresh draws from `D_λ` for every batch.
    Online,
    /// A fixed sample, reshuffled every epoch.
    Finite(&'a [LabeledSample]),
}

/// One row of per-epoch training metrics. Optional columns are computed on a
/// cadence and are empty otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub core_corr: f64,
    pub spurious_corr: f64,
    pub decoded_core: Option<f64>,
    pub decoded_spurious: Option<f64>,
    pub spurious_subnet_weight: Option<f64>,
    pub core_subnet_weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Observer that never stops training.
pub fn no_observer<T>(_: &MlpModel<T>, _: &EpochRecord) -> Result<EpochControl> {
    Ok(EpochControl::Continue)
}

/// Momentum SGD on `-2 log φ(y h)`.
///
/// Batch `b` of epoch `e` uses the stream `(seed, EPOCH, e, b)` in online
/// mode; finite mode permutes the data with `(seed, SHUFFLE, e)`. After each
/// epoch the metrics in `plan` are evaluated and `observer` sees the model and
/// the new record; training ends after `config.epochs`, when the plan's stop
/// rule fires, or when the observer asks to stop.
pub fn sgd_train<T: Scalar>(
    model: &mut MlpModel<T>,
    config: &TrainConfig,
    task: &SpuriousTaskConfig,
    source: DataSource<'_>,
    plan: &MetricPlan,
    observer: &mut dyn FnMut(&MlpModel<T>, &EpochRecord) -> Result<EpochControl>,
) -> Result<TrainOutcome> {
    config.validate()?;
    task.validate()?;
    if model.input_dim() != task.n() {
        return Err(Error::Dimension {
            expected: task.n(),
            got: model.input_dim(),
        });
    }
    if let DataSource::Finite(data) = source {
        if data.is_empty() {
            return Err(Error::param("finite training set is empty"));
        }
        if let Some(bad) = data.iter().find(|s| s.x.len() != task.n()) {
            return Err(Error::Dimension {
                expected: task.n(),
                got: bad.x.len(),
            });
        }
    }
    let n = task.n();
    let mut sampler = SpuriousSampler::new(task, rng::stream(config.seed, &[tag::EPOCH]))?;
    let mut velocity = ModelGrad::zeros_like(model);
    let mut ws = BatchWorkspace::new(model, config.batch_size);
    let mut grad = ModelGrad::zeros_like(model);
    let mut xs: Vec<i8> = Vec::with_capacity(config.batch_size * n);
    let mut ys: Vec<i8> = Vec::with_capacity(config.batch_size);
    let mut order: Vec<usize> = match source {
        DataSource::Finite(data) => (0..data.len()).collect(),
        DataSource::Online => Vec::new(),
    };
    let steps = config.steps_per_epoch(&source);
    let mut records = Vec::new();
    let mut stop_tracker = plan.early_stop.map(metrics::StopTracker::new);
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        if let DataSource::Finite(_) = source {
            order.shuffle(&mut rng::stream(config.seed, &[tag::SHUFFLE, epoch as u64]));
        }
        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        for step in 0..steps {
            xs.clear();
            ys.clear();
            match source {
                DataSource::Online => {
                    sampler.reseed(rng::stream(config.seed, &[tag::EPOCH, epoch as u64, step as u64]));
                    let batch = config
                        .batch_size
                        .min(config.samples_per_epoch - step * config.batch_size);
                    xs.resize(batch * n, 1);
                    for x in xs.chunks_exact_mut(n) {
                        let (y, _) = sampler.sample_into(x)?;
                        ys.push(y);
                    }
                }
                DataSource::Finite(data) => {
                    let lo = step * config.batch_size;
                    let hi = (lo + config.batch_size).min(data.len());
                    for &i in &order[lo..hi] {
                        xs.extend_from_slice(data[i].x.as_slice());
                        ys.push(data[i].y);
                    }
                }
            }
            grad.for_each_mut(|g| *g = T::zero());
            let scale = T::one() / T::of(ys.len() as f64);
            let batch_loss = model.backprop_batch(&xs, &ys, &mut ws, &mut grad, scale);
            let batch_loss = (batch_loss * scale).to_f64_lossy();
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {step}; lower the learning rate"
                )));
            }
            loss_sum += batch_loss * ys.len() as f64;
            loss_count += ys.len();
            momentum_step(model, &grad, &mut velocity, config);
        }
        let train_loss = loss_sum / loss_count as f64;
        let record = metrics::evaluate_epoch(model, task, plan, epoch, train_loss, config.seed)?;
        let observer_stop = observer(model, &record)? == EpochControl::Stop;
        let rule_stop = stop_tracker.as_mut().is_some_and(|t| t.update(&record));
        records.push(record);
        if observer_stop || rule_stop {
            stopped_early = epoch < config.epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        records,
        stopped_early,
    })
}

/// `v ← μ v + g + wd·w; w ← w − lr·v`, skipping the frozen output bias.
fn momentum_step<T: Scalar>(
    model: &mut MlpModel<T>,
    grad: &ModelGrad<T>,
    velocity: &mut ModelGrad<T>,
    config: &TrainConfig,
) {
    let lr = T::of(config.learning_rate);
    let mu = T::of(config.momentum);
    let wd = T::of(config.weight_decay);
    let update = |p: &mut T, g: T, v: &mut T| {
        *v = mu * *v + g + wd * *p;
        *p = *p - lr * *v;
    };
    for ((layer, (gw, gb)), (vw, vb)) in model.hidden.iter_mut().zip(&grad.hidden).zip(&mut velocity.hidden) {
        for ((p, g), v) in layer.weights.iter_mut().zip(gw).zip(vw.iter_mut()) {
            update(p, *g, v);
        }
        for ((p, g), v) in layer.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
            update(p, *g, v);
        }
    }
    for ((p, g), v) in model.output.iter_mut().zip(&grad.output).zip(velocity.output.iter_mut()) {
        update(p, *g, v);
    }
    if config.train_output_bias {
        update(&mut model.output_bias, grad.output_bias, &mut velocity.output_bias);
    }
    model.apply_input_mask();
}
