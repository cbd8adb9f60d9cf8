use serde::{Deserialize, Serialize};

use super::model::{MlpModel, ModelGrad};
use crate::dataset::{SpuriousSampler, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::theory;

/// Settings for the two-phase layer-wise procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerwiseConfig {
    /// Samples averaged for the single first-layer step (`m`).
    pub first_step_samples: usize,
    /// Output-layer SGD steps (`T`).
    pub second_phase_steps: usize,
    pub batch_size: usize,
    /// Output-layer step size; `None` uses `2√s / (3√(rT) n)`.
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for LayerwiseConfig {
    fn default() -> Self {
        LayerwiseConfig {
            first_step_samples: 100_000,
            second_phase_steps: 20_000,
            batch_size: 64,
            learning_rate: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerwiseReport {
    /// `μ = 1/g` used for the first step.
    pub first_step_lr: f64,
    pub second_phase_lr: f64,
    /// Coordinates kept by thresholding, per neuron.
    pub kept: Vec<Vec<usize>>,
}

/// One large first-layer step followed by output-layer SGD.
///
/// Phase 1 estimates the first-layer gradient `ĝ` from `m` samples, sets each
/// weight vector to `-μ ĝ` with `μ = 1/g` ([`theory::first_step_gradient_scale`]),
/// and zeroes every coordinate whose `|ĝ_j|` is below the mean `|ĝ|` of that
/// neuron. Phase 2 freezes the hidden layer, resets `a = 0`, and runs plain SGD
/// on `a` for `T` steps. The incoming model should come from the symmetric
/// Boolean initialization so that `h ≡ 0` and `∂ℓ/∂h = -y` during phase 1.
pub fn layerwise_train<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    config: &LayerwiseConfig,
) -> Result<(MlpModel<T>, LayerwiseReport)> {
    if model.depth() != 2 {
        return Err(Error::Unsupported(format!(
            "layer-wise training needs depth 2, got {}",
            model.depth()
        )));
    }
    if model.input_dim() != task.n() {
        return Err(Error::Dimension {
            expected: task.n(),
            got: model.input_dim(),
        });
    }
    if config.first_step_samples == 0 || config.second_phase_steps == 0 || config.batch_size == 0 {
        return Err(Error::param("sample count, step count and batch size must be positive"));
    }
    let n = task.n();
    let width = model.width();
    let g = theory::first_step_gradient_scale(task)?;
    let mu = 1.0 / g;

    let mut sampler = SpuriousSampler::new(task, rng::stream(config.seed, &[tag::LAYERWISE, 0]))?;
    let mut ws = model.workspace();
    let mut grad = ModelGrad::zeros_like(model);
    let scale = T::one() / T::of(config.first_step_samples as f64);
    let mut x = vec![1i8; n];
    for _ in 0..config.first_step_samples {
        let (y, _) = sampler.sample_into(&mut x)?;
        model.backprop(&x, y, &mut ws, &mut grad, scale);
    }

    let mut out = model.clone();
    let mut kept = Vec::with_capacity(width);
    {
        let layer = &mut out.hidden[0];
        let gw = &grad.hidden[0].0;
        for i in 0..width {
            let row_g = &gw[i * n..(i + 1) * n];
            let mean_abs = row_g.iter().map(|v| v.abs()).fold(T::zero(), |a, b| a + b) / T::of(n as f64);
            let mut keep = Vec::new();
            for (j, (w, &gj)) in layer.row_mut(i).iter_mut().zip(row_g).enumerate() {
                if gj.abs() >= mean_abs && gj != T::zero() {
                    *w = -T::of(mu) * gj;
                    keep.push(j);
                } else {
                    *w = T::zero();
                }
            }
            kept.push(keep);
        }
    }
    out.apply_input_mask();

    let steps = config.second_phase_steps;
    let lr = config.learning_rate.unwrap_or_else(|| {
        let s = task.spurious_len.max(1) as f64;
        2.0 * s.sqrt() / (3.0 * (width as f64 * steps as f64).sqrt() * n as f64)
    });
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::param("second-phase learning rate must be positive"));
    }
    for a in &mut out.output {
        *a = T::zero();
    }
    out.output_bias = T::zero();
    let lr_t = T::of(lr);
    let batch_scale = T::one() / T::of(config.batch_size as f64);
    let mut ws = out.workspace();
    let mut grad = ModelGrad::zeros_like(&out);
    for step in 0..steps {
        sampler.reseed(rng::stream(config.seed, &[tag::LAYERWISE, 1, step as u64]));
        grad.output.iter_mut().for_each(|g| *g = T::zero());
        for _ in 0..config.batch_size {
            let (y, _) = sampler.sample_into(&mut x)?;
            // Only the output-layer gradient is used; it needs the forward pass alone.
            let h = out.forward_with(&x, &mut ws);
            let yt = T::of_sign(y);
            let dh = -T::of(2.0) * yt * crate::scalar::sigmoid(-yt * h) * batch_scale;
            for (g, v) in grad.output.iter_mut().zip(ws.embedding()) {
                *g = *g + dh * *v;
            }
        }
        for (a, g) in out.output.iter_mut().zip(&grad.output) {
            *a = *a - lr_t * *g;
        }
    }
    Ok((
        out,
        LayerwiseReport {
            first_step_lr: mu,
            second_phase_lr: lr,
            kept,
        },
    ))
}
