//! Logistic-regression probes on last-layer hidden activations: decoded
//! correlations and last-layer retraining.

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureTarget, SpuriousSampler, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::network::MlpModel;
use crate::rng::{self, tag};
use crate::scalar::{neg_log_sigmoid, sigmoid, sign, Scalar};

/// Fit/eval sample size when the per-epoch sample count is the default 10 000.
pub const DEFAULT_PROBE_SAMPLES: usize = 2000;
pub const MAX_PROBE_ITERATIONS: usize = 1000;
pub const PROBE_GRADIENT_TOLERANCE: f64 = 1e-6;

/// `min(2000, ⌈N/2⌉)`.
pub fn probe_sample_size(dataset_size: usize) -> usize {
    DEFAULT_PROBE_SAMPLES.min(dataset_size.div_ceil(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    L1,
    L2,
}

/// Penalty `strength · R(w)` added to the summed logistic loss, so the mean
/// objective carries `strength / N`; the same scaling as a `C = 1/strength`
/// logistic regression. The intercept is never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeReg {
    pub kind: RegKind,
    pub strength: f64,
}

impl Default for ProbeReg {
    fn default() -> Self {
        ProbeReg {
            kind: RegKind::L2,
            strength: 1.0,
        }
    }
}

impl ProbeReg {
    pub fn l1(strength: f64) -> Self {
        ProbeReg {
            kind: RegKind::L1,
            strength,
        }
    }

    pub fn l2(strength: f64) -> Self {
        ProbeReg {
            kind: RegKind::L2,
            strength,
        }
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        match self.kind {
            RegKind::L2 => 0.5 * self.strength * w.iter().map(|v| v * v).sum::<f64>(),
            RegKind::L1 => self.strength * w.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub reg: ProbeReg,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticProbe {
    pub fn decision(&self, e: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(e).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, e: &[f64]) -> i8 {
        sign(self.decision(e))
    }
}

/// Row-major embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Embeddings {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Embeddings {
            rows: rows.len(),
            dim,
            data: rows.concat(),
        })
    }
}

/// Last hidden layer activations of `model` at `x`.
pub fn embed<T: Scalar>(model: &MlpModel<T>, x: &[i8]) -> Result<Vec<T>> {
    model.embed(x)
}

/// Embeddings of many inputs given as flat row-major ±1 data.
pub fn embed_batch<T: Scalar>(model: &MlpModel<T>, inputs: &[i8]) -> Result<Embeddings> {
    let n = model.input_dim();
    if inputs.len() % n != 0 {
        return Err(Error::Dimension {
            expected: n,
            got: inputs.len() % n,
        });
    }
    let mut ws = model.workspace();
    let mut data = Vec::with_capacity(inputs.len() / n * model.width());
    for x in inputs.chunks_exact(n) {
        model.forward_with(x, &mut ws);
        data.extend(ws.embedding().iter().map(|v| v.to_f64_lossy()));
    }
    Ok(Embeddings {
        rows: inputs.len() / n,
        dim: model.width(),
        data,
    })
}

struct Problem<'a> {
    e: &'a Embeddings,
    t: &'a [f64],
    reg: ProbeReg,
}

impl Problem<'_> {
    /// Mean smooth loss (logistic plus L2 when applicable), and its gradient.
    fn smooth(&self, w: &[f64], b: f64, grad: Option<(&mut [f64], &mut f64)>) -> f64 {
        let n = self.e.rows as f64;
        let mut loss = 0.0;
        let mut gw_acc = grad;
        if let Some((gw, gb)) = gw_acc.as_mut() {
            gw.iter_mut().for_each(|g| *g = 0.0);
            **gb = 0.0;
        }
        for i in 0..self.e.rows {
            let row = self.e.row(i);
            let z = b + w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
            let m = self.t[i] * z;
            loss += neg_log_sigmoid(m);
            if let Some((gw, gb)) = gw_acc.as_mut() {
                let d = -self.t[i] * sigmoid(-m) / n;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += d * v;
                }
                **gb += d;
            }
        }
        loss /= n;
        if self.reg.kind == RegKind::L2 {
            loss += self.reg.penalty(w) / n;
            if let Some((gw, _)) = gw_acc.as_mut() {
                for (g, v) in gw.iter_mut().zip(w) {
                    *g += self.reg.strength * v / n;
                }
            }
        }
        loss
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let base = self.smooth(w, b, None);
        match self.reg.kind {
            RegKind::L2 => base,
            RegKind::L1 => base + self.reg.penalty(w) / self.e.rows as f64,
        }
    }
}

/// Record of the objective after every accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub objective: Vec<f64>,
}

/// Minimizes the regularized mean logistic loss by full-batch gradient descent
/// (proximal steps for L1) with a Barzilai-Borwein initial step and Armijo
/// backtracking. Stops when the (proximal) gradient max-norm drops to `1e-6`
/// or after 1000 iterations.
pub fn fit_probe(embeddings: &Embeddings, targets: &[i8], reg: &ProbeReg) -> Result<LogisticProbe> {
    fit_probe_traced(embeddings, targets, reg).map(|(p, _)| p)
}

pub fn fit_probe_traced(embeddings: &Embeddings, targets: &[i8], reg: &ProbeReg) -> Result<(LogisticProbe, FitTrace)> {
    if embeddings.rows != targets.len() {
        return Err(Error::Dimension {
            expected: embeddings.rows,
            got: targets.len(),
        });
    }
    if embeddings.rows < 2 {
        return Err(Error::param("probe needs at least two examples"));
    }
    if !(reg.strength >= 0.0 && reg.strength.is_finite()) {
        return Err(Error::param("regularization strength must be non-negative"));
    }
    let positives = targets.iter().filter(|&&t| t > 0).count();
    if positives == 0 || positives == targets.len() {
        return Err(Error::Degenerate("probe targets contain a single class".into()));
    }
    let t: Vec<f64> = targets.iter().map(|&v| f64::from(v.signum())).collect();
    let prob = Problem {
        e: embeddings,
        t: &t,
        reg: *reg,
    };
    let p = embeddings.dim;
    let l1 = reg.kind == RegKind::L1;
    let l1_scale = reg.strength / embeddings.rows as f64;

    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut gw = vec![0.0; p];
    let mut gb = 0.0;
    let mut f = prob.smooth(&w, b, Some((&mut gw, &mut gb)));
    let mut trace = vec![prob.objective(&w, b)];
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, f64, Vec<f64>, f64)> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut nw = vec![0.0; p];
    let mut ngw = vec![0.0; p];

    for it in 0..MAX_PROBE_ITERATIONS {
        iterations = it;
        let stationarity = if l1 {
            // Proximal-gradient residual with unit step.
            let mut m = (gb).abs();
            for j in 0..p {
                let z = w[j] - gw[j];
                let prox = z.signum() * (z.abs() - l1_scale).max(0.0);
                m = m.max((w[j] - prox).abs());
            }
            m
        } else {
            gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()))
        };
        if stationarity <= PROBE_GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        if let Some((pw, pb, pgw, pgb)) = &prev {
            let mut sy = (b - pb) * (gb - pgb);
            let mut ss = (b - pb) * (b - pb);
            for j in 0..p {
                let s = w[j] - pw[j];
                sy += s * (gw[j] - pgw[j]);
                ss += s * s;
            }
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-10, 1e10);
            }
        }
        let current = *trace.last().expect("initial objective recorded");
        let mut accepted = false;
        for _ in 0..60 {
            let nb = b - step * gb;
            let mut decrease = gb * (nb - b);
            let mut dist = (nb - b) * (nb - b);
            for j in 0..p {
                let z = w[j] - step * gw[j];
                nw[j] = if l1 {
                    z.signum() * (z.abs() - step * l1_scale).max(0.0)
                } else {
                    z
                };
                let d = nw[j] - w[j];
                decrease += gw[j] * d;
                dist += d * d;
            }
            let mut ngb = 0.0;
            let nf = prob.smooth(&nw, nb, Some((&mut ngw, &mut ngb)));
            let ok = if l1 {
                nf <= f + decrease + dist / (2.0 * step) + 1e-15 * f.abs()
            } else {
                nf <= f - 1e-4 * step * (gb * gb + gw.iter().map(|g| g * g).sum::<f64>())
            };
            let new_objective = if l1 { nf + reg.penalty(&nw) / embeddings.rows as f64 } else { nf };
            if ok && new_objective <= current {
                prev = Some((w.clone(), b, gw.clone(), gb));
                w.copy_from_slice(&nw);
                b = nb;
                gw.copy_from_slice(&ngw);
                gb = ngb;
                f = nf;
                trace.push(new_objective);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No further decrease is representable; the iterate is as good as it gets.
            converged = true;
            break;
        }
        iterations = it + 1;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numerical("probe weights diverged".into()));
    }
    Ok((
        LogisticProbe {
            weights: w,
            bias: b,
            reg: *reg,
            iterations,
            converged,
        },
        FitTrace { objective: trace },
    ))
}

/// Held-out correlation `mean(t · sgn(probe(e)))`.
pub fn probe_correlation(probe: &LogisticProbe, embeddings: &Embeddings, targets: &[i8]) -> Result<f64> {
    if embeddings.rows != targets.len() || embeddings.rows == 0 {
        return Err(Error::Dimension {
            expected: embeddings.rows,
            got: targets.len(),
        });
    }
    let total: f64 = (0..embeddings.rows)
        .map(|i| f64::from(targets[i]) * f64::from(probe.predict(embeddings.row(i))))
        .sum();
    Ok(total / embeddings.rows as f64)
}

fn balanced_sample<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    target: FeatureTarget,
    size: usize,
    stream: rng::StreamRng,
) -> Result<(Embeddings, Vec<i8>)> {
    let feature = task
        .feature(target)
        .ok_or_else(|| Error::param("task has no spurious feature"))?;
    let balanced = task.with_lambda(0.5);
    let mut sampler = SpuriousSampler::new(&balanced, stream)?;
    let n = task.n();
    let mut xs = vec![1i8; size * n];
    let mut targets = Vec::with_capacity(size);
    for x in xs.chunks_exact_mut(n) {
        sampler.sample_into(x)?;
        targets.push(feature.eval_unchecked(x));
    }
    Ok((embed_batch(model, &xs)?, targets))
}

/// Fit a probe for `f_target` on `n_fit` group-balanced samples and return its
/// correlation on `n_eval` fresh balanced samples.
pub fn decoded_correlation<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    target: FeatureTarget,
    n_fit: usize,
    n_eval: usize,
    reg: &ProbeReg,
    seed: u64,
) -> Result<f64> {
    if model.input_dim() != task.n() {
        return Err(Error::Dimension {
            expected: task.n(),
            got: model.input_dim(),
        });
    }
    if n_eval == 0 {
        return Err(Error::param("evaluation sample size must be positive"));
    }
    let (fit_e, fit_t) = balanced_sample(model, task, target, n_fit, rng::stream(seed, &[tag::PROBE_FIT]))?;
    let probe = fit_probe(&fit_e, &fit_t, reg)?;
    let (eval_e, eval_t) = balanced_sample(model, task, target, n_eval, rng::stream(seed, &[tag::PROBE_EVAL]))?;
    probe_correlation(&probe, &eval_e, &eval_t)
}

/// Data and penalty for last-layer retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainConfig {
    pub lambda: f64,
    pub size: usize,
    #[serde(default)]
    pub reg: ProbeReg,
    #[serde(default)]
    pub seed: u64,
}

/// Fit a probe predicting `y` on `size` draws from `D_{λ_retrain}` and install it
/// as the output layer.
pub fn last_layer_retrain<T: Scalar>(
    model: &MlpModel<T>,
    task: &SpuriousTaskConfig,
    config: &RetrainConfig,
) -> Result<(MlpModel<T>, LogisticProbe)> {
    if config.size == 0 {
        return Err(Error::param("retraining set must be non-empty"));
    }
    if model.input_dim() != task.n() {
        return Err(Error::Dimension {
            expected: task.n(),
            got: model.input_dim(),
        });
    }
    let retrain_task = task.with_lambda(config.lambda);
    retrain_task.validate()?;
    let mut sampler = SpuriousSampler::new(&retrain_task, rng::stream(config.seed, &[tag::RETRAIN]))?;
    let n = task.n();
    let mut xs = vec![1i8; config.size * n];
    let mut ys = Vec::with_capacity(config.size);
    for x in xs.chunks_exact_mut(n) {
        ys.push(sampler.sample_into(x)?.0);
    }
    let e = embed_batch(model, &xs)?;
    let probe = fit_probe(&e, &ys, &config.reg)?;
    let weights = probe.weights.iter().map(|&v| T::of(v)).collect();
    let retrained = model.last_layer_replace(weights, T::of(probe.bias))?;
    Ok((retrained, probe))
}
