//! Minority-group inference from trained models, scored against the true
//! minority set, plus retraining with the inferred group upsampled.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Group, LabeledSample, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, CorrelationMode, GroupAccuracies, MetricPlan};
use crate::network::{loss, no_observer, sgd_train, DataSource, EpochRecord, MlpModel, TrainConfig};
use crate::scalar::{sigmoid, sign, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMethod {
    /// Misclassified points.
    Jtt,
    /// Top-k cross-entropy.
    Ce,
    /// Top-k divergence from a later model.
    Kl,
    /// Per-class two-cluster split of the margin; a simplified SPARE-like stand-in.
    Cluster,
}

impl InferenceMethod {
    pub const ALL: [InferenceMethod; 4] = [
        InferenceMethod::Jtt,
        InferenceMethod::Ce,
        InferenceMethod::Kl,
        InferenceMethod::Cluster,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InferenceMethod::Jtt => "jtt",
            InferenceMethod::Ce => "ce",
            InferenceMethod::Kl => "kl",
            InferenceMethod::Cluster => "cluster",
        }
    }
}

impl fmt::Display for InferenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InferenceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InferenceMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown inference method {s:?} (jtt, ce, kl, cluster)")))
    }
}

/// Predicted minority indices (ascending) into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupInference {
    pub predicted_minority: Vec<usize>,
    pub method: InferenceMethod,
    pub epoch: usize,
}

fn logits<T: Scalar>(model: &MlpModel<T>, data: &[LabeledSample]) -> Result<Vec<f64>> {
    if let Some(bad) = data.iter().find(|s| s.x.len() != model.input_dim()) {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: bad.x.len(),
        });
    }
    let mut ws = model.workspace();
    Ok(data
        .iter()
        .map(|s| model.forward_with(s.x.as_slice(), &mut ws).to_f64_lossy())
        .collect())
}

/// Indices where `sgn(h(x)) ≠ y`.
pub fn jtt_infer<T: Scalar>(model: &MlpModel<T>, data: &[LabeledSample], epoch: usize) -> Result<GroupInference> {
    let h = logits(model, data)?;
    Ok(GroupInference {
        predicted_minority: (0..data.len()).filter(|&i| sign(h[i]) != data[i].y).collect(),
        method: InferenceMethod::Jtt,
        epoch,
    })
}

/// The `k` largest scores, ties broken by ascending index; result sorted.
fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::param(format!("k must lie in 1..={}, got {k}", scores.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// The `k` points with the largest loss `ℓ(h(x), y)`.
pub fn rank_by_ce<T: Scalar>(model: &MlpModel<T>, data: &[LabeledSample], k: usize, epoch: usize) -> Result<GroupInference> {
    let h = logits(model, data)?;
    let scores: Vec<f64> = h.iter().zip(data).map(|(&v, s)| loss(v, s.y)).collect();
    Ok(GroupInference {
        predicted_minority: top_k(&scores, k)?,
        method: InferenceMethod::Ce,
        epoch,
    })
}

/// `KL(Bern(p) ‖ Bern(q))` for `p = φ(h_p)`, `q = φ(h_q)`, computed from logits.
pub fn bernoulli_kl(h_p: f64, h_q: f64) -> f64 {
    let p = sigmoid(h_p);
    // log p - log q = softplus(-h_q) - softplus(-h_p); same for the complements.
    let lp_lq = crate::scalar::softplus(-h_q) - crate::scalar::softplus(-h_p);
    let l1p_l1q = crate::scalar::softplus(h_q) - crate::scalar::softplus(h_p);
    (p * lp_lq + (1.0 - p) * l1p_l1q).max(0.0)
}

/// The `k` points with the largest `KL(φ(h_early) ‖ φ(h_late))`.
pub fn rank_by_kl<T: Scalar>(
    early: &MlpModel<T>,
    late: &MlpModel<T>,
    data: &[LabeledSample],
    k: usize,
    epoch: usize,
) -> Result<GroupInference> {
    if !early.same_architecture(late) {
        return Err(Error::param("KL ranking needs two snapshots of the same architecture"));
    }
    let he = logits(early, data)?;
    let hl = logits(late, data)?;
    let scores: Vec<f64> = he.iter().zip(&hl).map(|(&a, &b)| bernoulli_kl(a, b)).collect();
    Ok(GroupInference {
        predicted_minority: top_k(&scores, k)?,
        method: InferenceMethod::Kl,
        epoch,
    })
}

/// Exact 1-D 2-means; returns the sorted-order split point `t` so that the low
/// cluster is the first `t` values, or `None` when all values coincide.
fn two_means_split(sorted: &[f64]) -> Option<usize> {
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return None;
    }
    let total: f64 = sorted.iter().sum();
    let total_sq: f64 = sorted.iter().map(|v| v * v).sum();
    let mut best: Option<(f64, usize)> = None;
    let (mut s, mut sq) = (0.0, 0.0);
    for t in 1..n {
        s += sorted[t - 1];
        sq += sorted[t - 1] * sorted[t - 1];
        if sorted[t - 1] == sorted[t] {
            continue;
        }
        let (nl, nr) = (t as f64, (n - t) as f64);
        let cost = (sq - s * s / nl) + ((total_sq - sq) - (total - s).powi(2) / nr);
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, t));
        }
    }
    best.map(|(_, t)| t)
}

/// Within each label class, split the margins `y·h(x)` into two clusters and
/// predict the lower-margin cluster as minority.
pub fn margin_cluster_infer<T: Scalar>(model: &MlpModel<T>, data: &[LabeledSample], epoch: usize) -> Result<GroupInference> {
    let h = logits(model, data)?;
    let mut predicted = Vec::new();
    for class in [1i8, -1] {
        let mut members: Vec<(f64, usize)> = data
            .iter()
            .enumerate()
            .filter(|(_, s)| s.y == class)
            .map(|(i, s)| (f64::from(s.y) * h[i], i))
            .collect();
        if members.is_empty() {
            return Err(Error::param(format!("label class {class:+} is empty")));
        }
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let values: Vec<f64> = members.iter().map(|m| m.0).collect();
        match two_means_split(&values) {
            Some(t) => predicted.extend(members[..t].iter().map(|m| m.1)),
            None => log::warn!("margins of class {class:+} are constant; no minority cluster inferred"),
        }
    }
    predicted.sort_unstable();
    Ok(GroupInference {
        predicted_minority: predicted,
        method: InferenceMethod::Cluster,
        epoch,
    })
}

/// `|A∩B| / |A∪B|`, defined as 1 when both are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (a, b): (BTreeSet<_>, BTreeSet<_>) = (a.iter().collect(), b.iter().collect());
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// `|A∩B| / |A|`, defined as 1 when `A` is empty.
pub fn containment(a: &[usize], b: &[usize]) -> f64 {
    let (a, b): (BTreeSet<_>, BTreeSet<_>) = (a.iter().collect(), b.iter().collect());
    if a.is_empty() {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / a.len() as f64
}

pub fn true_minority(data: &[LabeledSample]) -> Vec<usize> {
    data.iter()
        .enumerate()
        .filter(|(_, s)| s.group == Group::Minority)
        .map(|(i, _)| i)
        .collect()
}

/// One `(epoch, method, jaccard, containment)` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceScore {
    pub epoch: usize,
    pub method: InferenceMethod,
    pub jaccard: f64,
    pub containment: f64,
    pub predicted: usize,
}

/// Runs `method` on the epoch model and scores it. `k` defaults to the true
/// minority size; `late` is the reference model for KL ranking.
pub fn score_inference<T: Scalar>(
    method: InferenceMethod,
    model: &MlpModel<T>,
    late: Option<&MlpModel<T>>,
    data: &[LabeledSample],
    k: Option<usize>,
    epoch: usize,
) -> Result<InferenceScore> {
    let truth = true_minority(data);
    let k = k.unwrap_or(truth.len()).max(1);
    let inf = match method {
        InferenceMethod::Jtt => jtt_infer(model, data, epoch)?,
        InferenceMethod::Ce => rank_by_ce(model, data, k, epoch)?,
        InferenceMethod::Kl => {
            let late = late.ok_or_else(|| Error::param("KL ranking needs a later model"))?;
            rank_by_kl(model, late, data, k, epoch)?
        }
        InferenceMethod::Cluster => margin_cluster_infer(model, data, epoch)?,
    };
    Ok(InferenceScore {
        epoch,
        method,
        jaccard: jaccard(&inf.predicted_minority, &truth),
        containment: containment(&inf.predicted_minority, &truth),
        predicted: inf.predicted_minority.len(),
    })
}

#[derive(Debug, Clone)]
pub struct UpsampleResult<T> {
    pub model: MlpModel<T>,
    pub records: Vec<EpochRecord>,
    pub group_accuracies: GroupAccuracies,
    pub worst_group_accuracy: f64,
    pub core_corr: f64,
}

pub const UPSAMPLE_EVAL_SAMPLES: usize = 20_000;

/// Retrains from scratch on `data` with every predicted-minority sample
/// repeated `⌈upweight⌉` times.
pub fn upsample_retrain<T: Scalar>(
    task: &SpuriousTaskConfig,
    data: &[LabeledSample],
    inference: &GroupInference,
    upweight: f64,
    train: &TrainConfig,
    plan: &MetricPlan,
) -> Result<UpsampleResult<T>> {
    if !(upweight >= 1.0 && upweight.is_finite()) {
        return Err(Error::param(format!("upweight must be at least 1, got {upweight}")));
    }
    if let Some(&bad) = inference.predicted_minority.iter().find(|&&i| i >= data.len()) {
        return Err(Error::param(format!("inferred index {bad} is outside the dataset")));
    }
    let copies = upweight.ceil() as usize;
    let mut expanded: Vec<LabeledSample> = data.to_vec();
    if inference.predicted_minority.is_empty() {
        log::warn!("empty group inference; retraining without upsampling");
    } else {
        for &i in &inference.predicted_minority {
            for _ in 1..copies {
                expanded.push(data[i].clone());
            }
        }
    }
    let mut model = train.init_model::<T>(task)?;
    let outcome = sgd_train(&mut model, train, task, DataSource::Finite(&expanded), plan, &mut no_observer)?;
    let groups = metrics::group_accuracies(&model, task, UPSAMPLE_EVAL_SAMPLES, train.seed)?;
    let mode = plan.correlation_mode(task, train.seed, 0);
    let core_corr = match mode {
        CorrelationMode::Exact | CorrelationMode::MonteCarlo { .. } => metrics::correlations(&model, task, mode)?.core.value,
    };
    Ok(UpsampleResult {
        model,
        records: outcome.records,
        worst_group_accuracy: groups.worst(),
        group_accuracies: groups,
        core_corr,
    })
}
