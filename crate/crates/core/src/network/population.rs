use super::model::{MlpModel, ModelGrad};
use crate::dataset::{SpuriousSampler, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::scalar::Scalar;

/// Smallest sample count accepted by [`population_gradient_mc`].
pub const MIN_POPULATION_SAMPLES: usize = 10_000;

/// Monte-Carlo estimate of `E_{D_λ}[∇ℓ]` with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T> {
    pub mean: ModelGrad<T>,
    pub std_error: ModelGrad<T>,
    pub samples: usize,
}

impl<T: Scalar> GradientEstimate<T> {
    /// `(mean, std_error)` of first-layer weight `(neuron, coord)`.
    pub fn first_layer_weight(&self, neuron: usize, coord: usize) -> (f64, f64) {
        let n = self.mean.hidden[0].0.len() / self.mean.hidden[0].1.len();
        (
            self.mean.first_layer_weight(neuron, coord, n).to_f64_lossy(),
            self.std_error.first_layer_weight(neuron, coord, n).to_f64_lossy(),
        )
    }
}

fn unflatten<T: Scalar>(model: &MlpModel<T>, flat: &[f64]) -> ModelGrad<T> {
    let mut g = ModelGrad::zeros_like(model);
    let mut it = flat.iter();
    g.for_each_mut(|v| *v = T::of(*it.next().expect("matching length")));
    g
}

/// Averages per-sample gradients over `samples` i.i.d. draws from `D_λ`
/// (stream `(seed, THEORY)`), accumulating moments in `f64`.
pub fn population_gradient_mc<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    samples: usize,
    seed: u64,
) -> Result<GradientEstimate<T>> {
    if samples < MIN_POPULATION_SAMPLES {
        return Err(Error::param(format!(
            "population gradient needs at least {MIN_POPULATION_SAMPLES} samples, got {samples}"
        )));
    }
    if model.input_dim() != task.n() {
        return Err(Error::Dimension {
            expected: task.n(),
            got: model.input_dim(),
        });
    }
    let mut sampler = SpuriousSampler::new(task, rng::stream(seed, &[tag::THEORY]))?;
    let mut ws = model.workspace();
    let mut grad = ModelGrad::zeros_like(model);
    let size = model.params().len();
    let mut sum = vec![0.0f64; size];
    let mut sum_sq = vec![0.0f64; size];
    let mut x = vec![1i8; task.n()];
    for _ in 0..samples {
        let (y, _) = sampler.sample_into(&mut x)?;
        grad.for_each_mut(|g| *g = T::zero());
        model.backprop(&x, y, &mut ws, &mut grad, T::one());
        let mut k = 0;
        grad.for_each_mut(|g| {
            let v = g.to_f64_lossy();
            sum[k] += v;
            sum_sq[k] += v * v;
            k += 1;
        });
    }
    let count = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let se: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = ((sq / count - m * m) * count / (count - 1.0)).max(0.0);
            (var / count).sqrt()
        })
        .collect();
    Ok(GradientEstimate {
        mean: unflatten(model, &mean),
        std_error: unflatten(model, &se),
        samples,
    })
}
