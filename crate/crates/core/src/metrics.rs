//! Feature correlations, group accuracies, neuron partitions, subnetwork
//! weights and convergence times.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boolfn::{self, Estimate, FeatureSpec};
use crate::dataset::{FeatureTarget, Group, SpuriousSampler, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::network::{BatchWorkspace, EpochRecord, MlpModel};
use crate::probe::{self, ProbeReg};
use crate::rng::{self, tag};
use crate::scalar::{sign, Scalar};

/// Largest `n` for exact correlation by enumeration.
pub const EXACT_CORRELATION_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// `(core, spurious)` correlation estimates under the uniform distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationPair {
    pub core: Estimate,
    /// `None` when the task has no spurious block.
    pub spurious: Option<Estimate>,
}

/// Inputs handed to a batch predictor at once.
const EVAL_CHUNK: usize = 256;

/// `E_{x uniform}[f(x) · p(x)]` for both features at once, where `p` returns
/// a ±1 prediction.
pub fn sign_correlations<F>(mut predict: F, task: &SpuriousTaskConfig, mode: CorrelationMode) -> Result<CorrelationPair>
where
    F: FnMut(&[i8]) -> i8,
{
    let n = task.n();
    chunked_sign_correlations(
        |xs, out| {
            out.extend(xs.chunks_exact(n).map(&mut predict));
            Ok(())
        },
        task,
        mode,
    )
}

/// [`sign_correlations`] with a predictor that labels a row-major chunk of
/// inputs, appending one ±1 value per row to `out`.
fn chunked_sign_correlations<F>(mut predict: F, task: &SpuriousTaskConfig, mode: CorrelationMode) -> Result<CorrelationPair>
where
    F: FnMut(&[i8], &mut Vec<i8>) -> Result<()>,
{
    let n = task.n();
    let core = task.core_feature();
    let spur = task.spurious_feature();
    let mut xs = vec![1i8; EVAL_CHUNK * n];
    let mut preds = Vec::with_capacity(EVAL_CHUNK);
    let (mut sc, mut sc2, mut ss, mut ss2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut flush = |xs: &[i8], preds: &mut Vec<i8>| -> Result<()> {
        preds.clear();
        predict(xs, preds)?;
        for (x, &p) in xs.chunks_exact(n).zip(preds.iter()) {
            let p = f64::from(p);
            let c = f64::from(core.eval_unchecked(x)) * p;
            sc += c;
            sc2 += c * c;
            if let Some(s) = spur {
                let v = f64::from(s.eval_unchecked(x)) * p;
                ss += v;
                ss2 += v * v;
            }
        }
        Ok(())
    };
    let mut run = |total: u64, fill: &mut dyn FnMut(u64, &mut [i8])| -> Result<()> {
        let mut i = 0u64;
        while i < total {
            let len = (total - i).min(EVAL_CHUNK as u64) as usize;
            for (k, x) in xs[..len * n].chunks_exact_mut(n).enumerate() {
                fill(i + k as u64, x);
            }
            flush(&xs[..len * n], &mut preds)?;
            i += len as u64;
        }
        Ok(())
    };
    let count = match mode {
        CorrelationMode::Exact => {
            if n > EXACT_CORRELATION_LIMIT {
                return Err(Error::Resource(format!(
                    "exact correlation needs n <= {EXACT_CORRELATION_LIMIT}, got {n}"
                )));
            }
            let total = 1u64 << n;
            run(total, &mut |i, x| boolfn::fill_from_index(i, x))?;
            let t = total as f64;
            return Ok(CorrelationPair {
                core: Estimate::exact(sc / t),
                spurious: spur.map(|_| Estimate::exact(ss / t)),
            });
        }
        CorrelationMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::param("Monte-Carlo correlation needs at least 2 samples"));
            }
            let mut r = rng::stream(seed, &[tag::METRIC]);
            run(samples as u64, &mut |_, x| boolfn::fill_uniform(&mut r, x))?;
            samples
        }
    };
    Ok(CorrelationPair {
        core: Estimate::from_sums(sc, sc2, count),
        spurious: spur.map(|_| Estimate::from_sums(ss, ss2, count)),
    })
}

/// Correlation of `sgn(h)` with both features (sgn(0) = +1).
pub fn correlations<T: Scalar>(model: &MlpModel<T>, task: &SpuriousTaskConfig, mode: CorrelationMode) -> Result<CorrelationPair> {
    check_dim(model, task)?;
    if mode == CorrelationMode::Exact && task.n() <= EXACT_CORRELATION_LIMIT {
        let logits = model.enumerate_logits()?;
        let mut next = 0;
        return chunked_sign_correlations(
            |xs, out| {
                let len = xs.len() / task.n();
                out.extend(logits[next..next + len].iter().map(|&h| sign(h)));
                next += len;
                Ok(())
            },
            task,
            mode,
        );
    }
    let mut ws = BatchWorkspace::new(model, EVAL_CHUNK);
    let mut logits = Vec::with_capacity(EVAL_CHUNK);
    chunked_sign_correlations(
        |xs, out| {
            model.forward_batch(xs, &mut ws, &mut logits)?;
            out.extend(logits.iter().map(|&h| sign(h)));
            Ok(())
        },
        task,
        mode,
    )
}

/// Correlation of `sgn(h)` with one feature under the uniform distribution.
pub fn correlation<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    target: FeatureTarget,
    mode: CorrelationMode,
) -> Result<f64> {
    let pair = correlations(model, task, mode)?;
    match target {
        FeatureTarget::Core => Ok(pair.core.value),
        FeatureTarget::Spurious => pair
            .spurious
            .map(|e| e.value)
            .ok_or_else(|| Error::param("task has no spurious feature")),
    }
}

fn check_dim<T: Scalar>(model: &MlpModel<T>, task: &SpuriousTaskConfig) -> Result<()> {
    if model.input_dim() != task.n() {
        return Err(Error::Dimension {
            expected: task.n(),
            got: model.input_dim(),
        });
    }
    Ok(())
}

/// Accuracy per `(label, group)` cell under group-balanced sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupAccuracies {
    /// Indexed `[label][group]`: label `+1` → 0, `-1` → 1; majority → 0, minority → 1.
    pub accuracy: [[f64; 2]; 2],
    pub counts: [[usize; 2]; 2],
}

impl GroupAccuracies {
    pub fn cell(&self, y: i8, group: Group) -> f64 {
        self.accuracy[usize::from(y < 0)][usize::from(group == Group::Minority)]
    }

    pub fn worst(&self) -> f64 {
        self.accuracy.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.accuracy.iter().flatten().sum::<f64>() / 4.0
    }
}

/// Cell accuracies of `sgn(h)` over `samples` draws from `D_{0.5}`.
pub fn group_accuracies<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    samples: usize,
    seed: u64,
) -> Result<GroupAccuracies> {
    let mut ws = model.workspace();
    check_dim(model, task)?;
    group_accuracies_fn(|x| sign(model.forward_with(x, &mut ws)), task, samples, seed)
}

/// [`group_accuracies`] for an arbitrary ±1 predictor.
pub fn group_accuracies_fn<F>(mut predict: F, task: &SpuriousTaskConfig, samples: usize, seed: u64) -> Result<GroupAccuracies>
where
    F: FnMut(&[i8]) -> i8,
{
    if samples < 1000 {
        return Err(Error::param(format!("group accuracies need at least 1000 samples, got {samples}")));
    }
    if task.spurious_feature().is_none() {
        return Err(Error::param("group accuracies need a spurious block"));
    }
    let balanced = task.with_lambda(0.5);
    let mut sampler = SpuriousSampler::new(&balanced, rng::stream(seed, &[tag::METRIC, 1]))?;
    let mut correct = [[0usize; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    let mut x = vec![1i8; task.n()];
    for _ in 0..samples {
        let (y, group) = sampler.sample_into(&mut x)?;
        let (r, c) = (usize::from(y < 0), usize::from(group == Group::Minority));
        counts[r][c] += 1;
        if predict(&x) == y {
            correct[r][c] += 1;
        }
    }
    let mut accuracy = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            accuracy[r][c] = if counts[r][c] == 0 {
                f64::NAN
            } else {
                correct[r][c] as f64 / counts[r][c] as f64
            };
        }
    }
    Ok(GroupAccuracies { accuracy, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronClass {
    Spurious,
    Core,
    Other,
}

/// Split of one hidden layer into spurious, core and other neurons.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NeuronPartition {
    pub spurious: Vec<usize>,
    pub core: Vec<usize>,
    pub other: Vec<usize>,
}

impl NeuronPartition {
    pub fn from_labels(labels: &[NeuronClass]) -> Self {
        let mut p = NeuronPartition::default();
        for (i, l) in labels.iter().enumerate() {
            match l {
                NeuronClass::Spurious => p.spurious.push(i),
                NeuronClass::Core => p.core.push(i),
                NeuronClass::Other => p.other.push(i),
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.spurious.len() + self.core.len() + self.other.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<NeuronClass> {
        let mut out = vec![NeuronClass::Other; self.len()];
        for &i in &self.spurious {
            out[i] = NeuronClass::Spurious;
        }
        for &i in &self.core {
            out[i] = NeuronClass::Core;
        }
        out
    }
}

pub const DEFAULT_NEURON_MARGIN: f64 = 0.1;

fn classify_by_mass<T: Scalar>(
    rows: impl Iterator<Item = Vec<T>>,
    spurious_mass: impl Fn(&[T]) -> f64,
    core_mass: impl Fn(&[T]) -> f64,
    margin: f64,
) -> Vec<NeuronClass> {
    rows.map(|row| {
        let s = spurious_mass(&row);
        let c = core_mass(&row);
        if s > c * (1.0 + margin) {
            NeuronClass::Spurious
        } else if c > s * (1.0 + margin) {
            NeuronClass::Core
        } else {
            NeuronClass::Other
        }
    })
    .collect()
}

/// Mean `|w|` over the given positions; 0 for none.
fn mean_abs<T: Scalar>(row: &[T], idx: impl ExactSizeIterator<Item = usize>) -> f64 {
    let len = idx.len();
    if len == 0 {
        return 0.0;
    }
    idx.map(|i| row[i].abs().to_f64_lossy()).sum::<f64>() / len as f64
}

/// First-layer partition: a neuron is spurious when its mean absolute weight
/// per spurious coordinate exceeds the mean per core coordinate by the factor
/// `1 + margin`, core in the reverse case, other otherwise. Per-coordinate
/// means keep blocks of different widths comparable.
pub fn classify_neurons<T: Scalar>(model: &MlpModel<T>, task: &SpuriousTaskConfig, margin: f64) -> Result<NeuronPartition> {
    check_dim(model, task)?;
    let layer = model.first_layer();
    let spur = task.block(crate::dataset::Block::Spurious);
    let core = task.block(crate::dataset::Block::Core);
    let mass = |r: std::ops::Range<usize>| move |row: &[T]| mean_abs(row, r.clone());
    let labels = classify_by_mass(
        (0..layer.outputs).map(|i| layer.row(i).to_vec()),
        mass(spur),
        mass(core),
        margin,
    );
    Ok(NeuronPartition::from_labels(&labels))
}

/// Partitions for every hidden layer. Layer `l > 0` neurons are classified by
/// their mean absolute weight on the spurious versus core neurons of layer `l - 1`.
pub fn classify_layers<T: Scalar>(model: &MlpModel<T>, task: &SpuriousTaskConfig, margin: f64) -> Result<Vec<NeuronPartition>> {
    let mut out = vec![classify_neurons(model, task, margin)?];
    for layer in &model.hidden[1..] {
        let prev = out.last().expect("first layer classified").clone();
        let mass = |idx: Vec<usize>| move |row: &[T]| mean_abs(row, idx.iter().copied());
        let labels = classify_by_mass(
            (0..layer.outputs).map(|i| layer.row(i).to_vec()),
            mass(prev.spurious.clone()),
            mass(prev.core.clone()),
            margin,
        );
        out.push(NeuronPartition::from_labels(&labels));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubnetWeights {
    pub core_mean: f64,
    pub spurious_mean: f64,
    /// `core_mean / spurious_mean`; `+∞` when the spurious mean is zero.
    pub ratio: f64,
}

/// Mean `|a_i|` over the core and spurious neurons of the last hidden layer.
pub fn subnetwork_weights<T: Scalar>(model: &MlpModel<T>, partition: &NeuronPartition) -> Result<SubnetWeights> {
    if partition.len() != model.width() {
        return Err(Error::Dimension {
            expected: model.width(),
            got: partition.len(),
        });
    }
    if partition.core.is_empty() || partition.spurious.is_empty() {
        return Err(Error::Degenerate(format!(
            "ratio undefined: {} core and {} spurious neurons",
            partition.core.len(),
            partition.spurious.len()
        )));
    }
    let mean = |idx: &[usize]| idx.iter().map(|&i| model.output[i].abs().to_f64_lossy()).sum::<f64>() / idx.len() as f64;
    let core_mean = mean(&partition.core);
    let spurious_mean = mean(&partition.spurious);
    let ratio = if spurious_mean == 0.0 {
        f64::INFINITY
    } else {
        core_mean / spurious_mean
    };
    Ok(SubnetWeights {
        core_mean,
        spurious_mean,
        ratio,
    })
}

/// Named columns of [`EpochRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMetric {
    TrainLoss,
    CoreCorr,
    SpuriousCorr,
    DecodedCore,
    DecodedSpurious,
    SpuriousSubnetWeight,
    CoreSubnetWeight,
}

impl RecordMetric {
    pub const ALL: [RecordMetric; 7] = [
        RecordMetric::TrainLoss,
        RecordMetric::CoreCorr,
        RecordMetric::SpuriousCorr,
        RecordMetric::DecodedCore,
        RecordMetric::DecodedSpurious,
        RecordMetric::SpuriousSubnetWeight,
        RecordMetric::CoreSubnetWeight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecordMetric::TrainLoss => "train_loss",
            RecordMetric::CoreCorr => "core_corr",
            RecordMetric::SpuriousCorr => "spurious_corr",
            RecordMetric::DecodedCore => "decoded_core",
            RecordMetric::DecodedSpurious => "decoded_spurious",
            RecordMetric::SpuriousSubnetWeight => "spurious_subnet_weight",
            RecordMetric::CoreSubnetWeight => "core_subnet_weight",
        }
    }

    /// Value of this column; `None` for missing or non-finite entries.
    pub fn value(self, r: &EpochRecord) -> Option<f64> {
        let v = match self {
            RecordMetric::TrainLoss => Some(r.train_loss),
            RecordMetric::CoreCorr => Some(r.core_corr),
            RecordMetric::SpuriousCorr => Some(r.spurious_corr),
            RecordMetric::DecodedCore => r.decoded_core,
            RecordMetric::DecodedSpurious => r.decoded_spurious,
            RecordMetric::SpuriousSubnetWeight => r.spurious_subnet_weight,
            RecordMetric::CoreSubnetWeight => r.core_subnet_weight,
        };
        v.filter(|x| x.is_finite())
    }
}

impl fmt::Display for RecordMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecordMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RecordMetric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Convergence {
    Reached(usize),
    NotReached,
}

impl Convergence {
    pub fn epoch(self) -> Option<usize> {
        match self {
            Convergence::Reached(e) => Some(e),
            Convergence::NotReached => None,
        }
    }
}

/// First epoch whose `metric` is at least `threshold`; later dips are ignored.
pub fn epochs_to_threshold(records: &[EpochRecord], metric: RecordMetric, threshold: f64) -> Result<Convergence> {
    if records.is_empty() {
        return Err(Error::param("no epoch records"));
    }
    Ok(records
        .iter()
        .find(|r| metric.value(r).is_some_and(|v| v >= threshold))
        .map_or(Convergence::NotReached, |r| Convergence::Reached(r.epoch)))
}

/// Stop training `patience` epochs after `metric` first reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub metric: RecordMetric,
    pub threshold: f64,
    #[serde(default)]
    pub patience: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct StopTracker {
    rule: EarlyStop,
    reached_at: Option<usize>,
}

impl StopTracker {
    pub(crate) fn new(rule: EarlyStop) -> Self {
        StopTracker { rule, reached_at: None }
    }

    pub(crate) fn update(&mut self, r: &EpochRecord) -> bool {
        if self.reached_at.is_none() && self.rule.metric.value(r).is_some_and(|v| v >= self.rule.threshold) {
            self.reached_at = Some(r.epoch);
        }
        self.reached_at.is_some_and(|e| r.epoch >= e + self.rule.patience)
    }
}

/// Which metrics to compute after every training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricPlan {
    /// Use exact enumeration when `n` is at most this; Monte-Carlo otherwise.
    pub exact_limit: usize,
    pub mc_samples: usize,
    /// Decoded correlations every this many epochs; 0 disables them.
    pub probe_every: usize,
    /// Probe fit and evaluation size; `None` means `min(2000, ⌈N/2⌉)` with `N`
    /// the per-epoch sample count.
    pub probe_samples: Option<usize>,
    pub probe_reg: ProbeReg,
    /// Subnetwork weight columns every this many epochs; 0 disables them.
    pub subnet_every: usize,
    pub neuron_margin: f64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for MetricPlan {
    fn default() -> Self {
        MetricPlan {
            exact_limit: 16,
            mc_samples: 20_000,
            probe_every: 1,
            probe_samples: None,
            probe_reg: ProbeReg::default(),
            subnet_every: 1,
            neuron_margin: DEFAULT_NEURON_MARGIN,
            early_stop: None,
        }
    }
}

impl MetricPlan {
    /// Correlations only, no probes or subnetwork columns.
    pub fn correlations_only() -> Self {
        MetricPlan {
            probe_every: 0,
            subnet_every: 0,
            ..MetricPlan::default()
        }
    }

    pub fn correlation_mode(&self, task: &SpuriousTaskConfig, seed: u64, epoch: usize) -> CorrelationMode {
        if task.n() <= self.exact_limit.min(EXACT_CORRELATION_LIMIT) {
            CorrelationMode::Exact
        } else {
            CorrelationMode::MonteCarlo {
                samples: self.mc_samples,
                seed: rng::derive_seed(seed, &[tag::METRIC, epoch as u64]),
            }
        }
    }
}

/// Per-epoch metric row for `model`.
pub fn evaluate_epoch<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    plan: &MetricPlan,
    epoch: usize,
    train_loss: f64,
    seed: u64,
) -> Result<EpochRecord> {
    let pair = correlations(model, task, plan.correlation_mode(task, seed, epoch))?;
    let mut record = EpochRecord {
        epoch,
        train_loss,
        core_corr: pair.core.value,
        spurious_corr: pair.spurious.map_or(f64::NAN, |e| e.value),
        decoded_core: None,
        decoded_spurious: None,
        spurious_subnet_weight: None,
        core_subnet_weight: None,
    };
    if plan.probe_every > 0 && epoch % plan.probe_every == 0 {
        let size = plan.probe_samples.unwrap_or(probe::DEFAULT_PROBE_SAMPLES);
        let probe_seed = rng::derive_seed(seed, &[tag::PROBE_FIT, epoch as u64]);
        record.decoded_core = Some(probe::decoded_correlation(
            model,
            task,
            FeatureTarget::Core,
            size,
            size,
            &plan.probe_reg,
            probe_seed,
        )?);
        if task.spurious_feature().is_some() {
            record.decoded_spurious = Some(probe::decoded_correlation(
                model,
                task,
                FeatureTarget::Spurious,
                size,
                size,
                &plan.probe_reg,
                probe_seed,
            )?);
        }
    }
    if plan.subnet_every > 0 && epoch % plan.subnet_every == 0 && model.depth() == 2 {
        let partition = classify_neurons(model, task, plan.neuron_margin)?;
        let mean = |idx: &[usize]| {
            (!idx.is_empty()).then(|| idx.iter().map(|&i| model.output[i].abs().to_f64_lossy()).sum::<f64>() / idx.len() as f64)
        };
        record.core_subnet_weight = mean(&partition.core);
        record.spurious_subnet_weight = mean(&partition.spurious);
    }
    Ok(record)
}

/// Correlation of an exact feature with another predictor; used by tests and
/// the theory constructions.
pub fn feature_correlation(predict: &FeatureSpec, task: &SpuriousTaskConfig) -> Result<CorrelationPair> {
    sign_correlations(|x| predict.eval_unchecked(x), task, CorrelationMode::Exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::InitScheme;

    fn rec(epoch: usize, core: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 0.0,
            core_corr: core,
            spurious_corr: 0.0,
            decoded_core: None,
            decoded_spurious: None,
            spurious_subnet_weight: None,
            core_subnet_weight: None,
        }
    }

    #[test]
    fn feature_predictors_have_known_correlations() {
        let task = SpuriousTaskConfig::parity(2, 2, 1, 0.9).unwrap();
        let core = task.core_feature();
        let spur = task.spurious_feature().unwrap();
        let c = sign_correlations(|x| core.eval_unchecked(x), &task, CorrelationMode::Exact).unwrap();
        assert_eq!(c.core.value, 1.0);
        assert_eq!(c.spurious.unwrap().value, 0.0);
        let neg = sign_correlations(|x| -core.eval_unchecked(x), &task, CorrelationMode::Exact).unwrap();
        assert_eq!(neg.core.value, -1.0);
        let s = sign_correlations(|x| spur.eval_unchecked(x), &task, CorrelationMode::Exact).unwrap();
        assert_eq!(s.core.value, 0.0);
        assert_eq!(s.spurious.unwrap().value, 1.0);
    }

    #[test]
    fn exact_and_monte_carlo_agree() {
        let task = SpuriousTaskConfig::parity(2, 4, 3, 0.9).unwrap();
        let mut r = rng::stream(3, &[]);
        let m = MlpModel::<f64>::init(9, &[10], InitScheme::StandardUniform, 1, &mut r).unwrap();
        let ex = correlations(&m, &task, CorrelationMode::Exact).unwrap();
        let mc = correlations(&m, &task, CorrelationMode::MonteCarlo { samples: 50_000, seed: 1 }).unwrap();
        assert!(mc.core.within(ex.core.value, 3.0), "{mc:?} vs {ex:?}");
        assert!(mc.spurious.unwrap().within(ex.spurious.unwrap().value, 3.0));
        assert!(correlations(&m, &SpuriousTaskConfig::parity(2, 4, 16, 0.9).unwrap(), CorrelationMode::Exact).is_err());
    }

    #[test]
    fn group_accuracy_cells() {
        let task = SpuriousTaskConfig::parity(2, 2, 1, 0.9).unwrap();
        let core = task.core_feature();
        let spur = task.spurious_feature().unwrap();
        let g = group_accuracies_fn(|x| core.eval_unchecked(x), &task, 4000, 1).unwrap();
        assert!(g.accuracy.iter().flatten().all(|&a| a == 1.0));
        let g = group_accuracies_fn(|x| spur.eval_unchecked(x), &task, 4000, 1).unwrap();
        assert_eq!(g.cell(1, Group::Majority), 1.0);
        assert_eq!(g.cell(-1, Group::Majority), 1.0);
        assert_eq!(g.cell(1, Group::Minority), 0.0);
        assert_eq!(g.cell(-1, Group::Minority), 0.0);
        assert!(group_accuracies_fn(|_| 1, &task, 10, 1).is_err());
    }

    #[test]
    fn neuron_classification_rules() {
        let task = SpuriousTaskConfig::parity(2, 2, 1, 0.9).unwrap();
        let rows = vec![
            vec![1.0, -1.0, 0.0, 0.0, 0.3],
            vec![0.0, 0.0, 0.5, 0.5, 0.0],
            vec![0.5, 0.5, -0.5, 0.5, 0.0],
        ];
        let m = MlpModel::two_layer(rows, vec![0.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = classify_neurons(&m, &task, DEFAULT_NEURON_MARGIN).unwrap();
        assert_eq!(p.spurious, vec![0]);
        assert_eq!(p.core, vec![1]);
        assert_eq!(p.other, vec![2]);
        let w = subnetwork_weights(&m, &p).unwrap();
        assert_eq!((w.core_mean, w.spurious_mean, w.ratio), (2.0, 1.0, 2.0));
        let zeroed = m.last_layer_replace(vec![0.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(subnetwork_weights(&zeroed, &p).unwrap().ratio, f64::INFINITY);
        let empty = NeuronPartition {
            spurious: vec![],
            core: vec![0, 1],
            other: vec![2],
        };
        assert!(matches!(subnetwork_weights(&m, &empty), Err(Error::Degenerate(_))));

        // Unequal block widths: compared per coordinate, not in total.
        let wide = SpuriousTaskConfig::parity(1, 3, 0, 0.9).unwrap();
        let m = MlpModel::two_layer(vec![vec![1.0, 0.5, -0.5, 0.5]], vec![0.0], vec![1.0]).unwrap();
        assert_eq!(classify_neurons(&m, &wide, DEFAULT_NEURON_MARGIN).unwrap().spurious, vec![0]);
    }

    #[test]
    fn thresholds() {
        let rs: Vec<_> = (1..=10).map(|e| rec(e, e as f64 / 10.0)).collect();
        assert_eq!(epochs_to_threshold(&rs, RecordMetric::CoreCorr, 0.7).unwrap(), Convergence::Reached(7));
        assert_eq!(epochs_to_threshold(&rs, RecordMetric::CoreCorr, 1.5).unwrap(), Convergence::NotReached);
        let noisy = vec![rec(1, 0.2), rec(2, 0.96), rec(3, 0.5), rec(4, 0.97)];
        assert_eq!(epochs_to_threshold(&noisy, RecordMetric::CoreCorr, 0.95).unwrap(), Convergence::Reached(2));
        assert!(epochs_to_threshold(&[], RecordMetric::CoreCorr, 0.5).is_err());
    }

    #[test]
    fn stop_tracker_waits_for_patience() {
        let mut t = StopTracker::new(EarlyStop {
            metric: RecordMetric::CoreCorr,
            threshold: 0.9,
            patience: 2,
        });
        assert!(!t.update(&rec(1, 0.95)));
        assert!(!t.update(&rec(2, 0.5)));
        assert!(t.update(&rec(3, 0.5)));
    }
}
