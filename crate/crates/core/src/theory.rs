//! Closed-form and numerically optimized reference values: initialization
//! gradients, Bayes margins, slowdown ratios, optimal spurious margins, and the
//! exact ReLU construction of parity.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::boolfn::{majority_fourier_xi, Estimate, FeatureSpec};
use crate::dataset::{SpuriousSampler, SpuriousTaskConfig};
use crate::error::{Error, Result};
use crate::network::MlpModel;
use crate::rng::{self, tag};
use crate::scalar::{neg_log_sigmoid, sigmoid};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.5..=1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda must lie in [0.5, 1], got {lambda}")));
    }
    Ok(())
}

fn check_layout(n: usize, s: usize, c: usize) -> Result<()> {
    if n % 2 == 0 {
        return Err(Error::param(format!("n must be odd, got {n}")));
    }
    if s == 0 || c == 0 || s % 2 != 0 || c % 2 != 0 {
        return Err(Error::param(format!("s and c must be positive and even, got s={s}, c={c}")));
    }
    if s + c >= n {
        return Err(Error::param(format!("s + c must be below n (s={s}, c={c}, n={n})")));
    }
    Ok(())
}

/// `(-(λ-½)(ξ_{s-1} - ξ_{s+1}), -½(ξ_{c-1} - ξ_{c+1}))` with `ξ` taken from
/// `Maj_n`. These are the gaps for the favorable sign pattern of `w` (all ones).
pub fn init_gradient_gaps(n: usize, s: usize, c: usize, lambda: f64) -> Result<(f64, f64)> {
    check_layout(n, s, c)?;
    check_lambda(lambda)?;
    let xi = |k| majority_fourier_xi(n, k);
    let spurious = -(lambda - 0.5) * (xi(s - 1)? - xi(s + 1)?);
    let core = -0.5 * (xi(c - 1)? - xi(c + 1)?);
    Ok((spurious, core))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordType {
    Spurious,
    Core,
    Noise,
}

fn chi_over(w: &[i8], range: std::ops::Range<usize>, toggle: usize) -> f64 {
    let mut p: i8 = range.clone().map(|i| w[i]).product();
    // Symmetric difference with {toggle}: multiplying by w_j adds or removes it.
    p *= w[toggle];
    f64::from(p)
}

/// Expected gradient `E_{D_λ}[∂ℓ/∂w_j]` of a neuron `a σ(wᵀx + b)` of a model
/// whose output is zero, for `w ∈ {±1}^n`, `|b| < 1` and parity features on
/// `x = (x_s, x_c, x_u)`:
///
/// - noise `j`: `-a(½ξ_{c+1}χ_{[c]∪j}(w) + (λ-½)ξ_{s+1}χ_{[s]∪j}(w))`
/// - core `j`: `-a(½ξ_{c-1}χ_{[c]\j}(w) + (λ-½)ξ_{s+1}χ_{[s]∪j}(w))`
/// - spurious `j`: `-a(½ξ_{c+1}χ_{[c]∪j}(w) + (λ-½)ξ_{s-1}χ_{[s]\j}(w))`
///
/// `j` is a global coordinate index and must lie in the block named by `coord`.
#[allow(clippy::too_many_arguments)]
pub fn init_population_gradient(
    w: &[i8],
    a: i8,
    coord: CoordType,
    j: usize,
    n: usize,
    s: usize,
    c: usize,
    lambda: f64,
) -> Result<f64> {
    check_layout(n, s, c)?;
    check_lambda(lambda)?;
    if w.len() != n {
        return Err(Error::Dimension { expected: n, got: w.len() });
    }
    if w.iter().any(|&v| v != 1 && v != -1) || (a != 1 && a != -1) {
        return Err(Error::param("w and a must be ±1 valued"));
    }
    let spur = 0..s;
    let core = s..s + c;
    let block_ok = match coord {
        CoordType::Spurious => spur.contains(&j),
        CoordType::Core => core.contains(&j),
        CoordType::Noise => (s + c..n).contains(&j),
    };
    if !block_ok {
        return Err(Error::param(format!("coordinate {j} is not a {coord:?} coordinate")));
    }
    let xi = |k| majority_fourier_xi(n, k);
    let half = 0.5;
    let lam = lambda - 0.5;
    let chi_c = chi_over(w, core, j);
    let chi_s = chi_over(w, spur, j);
    let inner = match coord {
        CoordType::Noise => half * xi(c + 1)? * chi_c + lam * xi(s + 1)? * chi_s,
        CoordType::Core => half * xi(c - 1)? * chi_c + lam * xi(s + 1)? * chi_s,
        CoordType::Spurious => half * xi(c + 1)? * chi_c + lam * xi(s - 1)? * chi_s,
    };
    Ok(-f64::from(a) * inner)
}

/// `g` whose reciprocal is the first-step learning rate of layer-wise training:
/// the larger of the spurious signal `(λ-½)|ξ_{s-1}|` and the core signal
/// `½|ξ_{c-1}|` at initialization. Needs odd `n` and parity features.
pub fn first_step_gradient_scale(task: &SpuriousTaskConfig) -> Result<f64> {
    let n = task.n();
    if n % 2 == 0 {
        return Err(Error::param(format!("layer-wise training needs odd n, got {n}")));
    }
    let (s, c) = (task.spurious_len, task.core_len);
    let core = 0.5 * majority_fourier_xi(n, c - 1)?.abs();
    let spur = if s > 0 {
        (task.lambda - 0.5) * majority_fourier_xi(n, s - 1)?.abs()
    } else {
        0.0
    };
    let g = core.max(spur);
    if g <= 0.0 {
        return Err(Error::Degenerate(
            "initial gradient signal vanishes; use parity blocks of even length".into(),
        ));
    }
    Ok(g)
}

/// `ln(λ/(1-λ))`: 0 at `λ = ½`, `+∞` at `λ = 1`.
pub fn bayes_margin(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok((lambda / (1.0 - lambda)).ln())
}

/// `4λ(1-λ)`.
pub fn slowdown_factor(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(4.0 * lambda * (1.0 - lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginPair {
    pub gamma_s: f64,
    pub gamma_c: f64,
}

/// `-λ log φ(γ_c + γ_s) - (1-λ) log φ(γ_c - γ_s)`.
pub fn spurious_loss(m: MarginPair, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !m.gamma_s.is_finite() || !m.gamma_c.is_finite() {
        return Err(Error::param("margins must be finite"));
    }
    Ok(lambda * neg_log_sigmoid(m.gamma_c + m.gamma_s) + (1.0 - lambda) * neg_log_sigmoid(m.gamma_c - m.gamma_s))
}

/// `∂/∂γ_s` of [`spurious_loss`]; zero at the optimum.
pub fn first_order_residual(gamma_s: f64, gamma_c: f64, lambda: f64) -> f64 {
    // σ(-z) rather than 1 - σ(z): the latter cancels to noise for large margins.
    -lambda * sigmoid(-(gamma_c + gamma_s)) + (1.0 - lambda) * sigmoid(-(gamma_c - gamma_s))
}

pub const MARGIN_SEARCH_UPPER: f64 = 50.0;

/// Minimizer of [`spurious_loss`] over `γ_s ∈ [0, 50]` by golden-section
/// search, finished with bisection on the first-order condition inside the
/// final bracket.
pub fn optimal_spurious_margin(gamma_c: f64, lambda: f64, tol: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda == 1.0 {
        return Err(Error::param("lambda must be below 1"));
    }
    if !(gamma_c >= 0.0 && gamma_c.is_finite()) {
        return Err(Error::param("gamma_c must be finite and non-negative"));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    let f = |g: f64| lambda * neg_log_sigmoid(gamma_c + g) + (1.0 - lambda) * neg_log_sigmoid(gamma_c - g);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, MARGIN_SEARCH_UPPER);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Loss values flatten near the optimum; the derivative keeps its sign.
    let d = |g: f64| first_order_residual(g, gamma_c, lambda);
    // Golden section only pins the minimum to about sqrt(eps); widen until
    // the bracket holds the sign change.
    let mut pad = 1e3 * tol;
    let (mut a, mut b) = ((lo - pad).max(0.0), (hi + pad).min(MARGIN_SEARCH_UPPER));
    while !(d(a) < 0.0 && d(b) > 0.0) && (a > 0.0 || b < MARGIN_SEARCH_UPPER) {
        pad *= 2.0;
        a = (lo - pad).max(0.0);
        b = (hi + pad).min(MARGIN_SEARCH_UPPER);
    }
    if d(a) < 0.0 && d(b) > 0.0 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if d(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        x = if d(a).abs() <= d(b).abs() { a } else { b };
    } else if d(0.0) >= 0.0 {
        x = 0.0;
    }
    Ok(x)
}

/// `2λ(1-φ(γ_s* + γ_c)) / (1-φ(γ_c))`: the core-gradient ratio between `D_λ`
/// with the spurious margin at its optimum and the balanced distribution.
pub fn core_gradient_ratio(gamma_c: f64, lambda: f64) -> Result<f64> {
    let gs = optimal_spurious_margin(gamma_c, lambda, 1e-10)?;
    Ok(2.0 * lambda * sigmoid(-(gs + gamma_c)) / sigmoid(-gamma_c))
}

/// `-2y φ(-y h)`, the derivative of `ℓ(h, y)` with respect to `h`.
fn loss_derivative(h: f64, y: i8) -> f64 {
    let y = f64::from(y);
    -2.0 * y * sigmoid(-y * h)
}

/// Shape of the core part of the decomposed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CoreShape {
    /// `h_c = γ_c f_c`.
    Homogeneous,
    /// `h_c = γ_c f_c + δ x_j`: depends on the probed coordinate directly.
    Perturbed { delta: f64 },
}

/// A spurious neuron inside a model `h = γ_s f_s + h_c` on parity features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadNeuronInstance {
    pub s: usize,
    pub c: usize,
    pub lambda: f64,
    pub gamma_s: f64,
    pub gamma_c: f64,
    /// Neuron weights over `(x_s, x_c)`.
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Global index of the probed core coordinate.
    pub coord: usize,
    pub core_shape: CoreShape,
}

impl DeadNeuronInstance {
    /// `s = c = 2`, `w = (1, 1, 0.2, 0.3)`, `b = 1`, `γ_s` at the Bayes margin:
    /// the activation is decided by `x_s` alone because every spurious
    /// pre-activation has magnitude at least 1 while the core weights sum to 0.5.
    pub fn standard(lambda: f64, gamma_c: f64) -> Result<Self> {
        Ok(DeadNeuronInstance {
            s: 2,
            c: 2,
            lambda,
            gamma_s: bayes_margin(lambda)?,
            gamma_c,
            weights: vec![1.0, 1.0, 0.2, 0.3],
            bias: 1.0,
            coord: 2,
            core_shape: CoreShape::Homogeneous,
        })
    }

    /// True when `Σ_{i∈C}|w_i|` is below `|w_j|` for every spurious `j`.
    pub fn precondition_holds(&self) -> bool {
        let core_mass: f64 = self.weights[self.s..].iter().map(|v| v.abs()).sum();
        self.weights[..self.s].iter().all(|w| core_mass < w.abs())
    }
}

/// MC estimate of `E_{D_λ}[ℓ'(h) σ'(wᵀx + b) x_j]` for the neuron's core
/// coordinate `j` (output weight 1), with samples from stream `(seed, THEORY)`.
pub fn dead_spurious_gradient_check(inst: &DeadNeuronInstance, samples: usize, seed: u64) -> Result<Estimate> {
    if inst.weights.len() != inst.s + inst.c {
        return Err(Error::Dimension {
            expected: inst.s + inst.c,
            got: inst.weights.len(),
        });
    }
    if !(inst.s..inst.s + inst.c).contains(&inst.coord) {
        return Err(Error::param("probed coordinate must be a core coordinate"));
    }
    if samples < 2 {
        return Err(Error::param("need at least two samples"));
    }
    let task = SpuriousTaskConfig::parity(inst.s, inst.c, 0, inst.lambda)?;
    let fs = task.spurious_feature().expect("s > 0");
    let fc = task.core_feature();
    let mut sampler = SpuriousSampler::new(&task, rng::stream(seed, &[tag::THEORY]))?;
    let mut x = vec![1i8; task.n()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let (y, _) = sampler.sample_into(&mut x)?;
        let xj = f64::from(x[inst.coord]);
        let mut h = inst.gamma_s * f64::from(fs.eval_unchecked(&x)) + inst.gamma_c * f64::from(fc.eval_unchecked(&x));
        if let CoreShape::Perturbed { delta } = inst.core_shape {
            h += delta * xj;
        }
        let pre = inst.bias + inst.weights.iter().zip(&x).map(|(w, &v)| w * f64::from(v)).sum::<f64>();
        let g = if pre > 0.0 { loss_derivative(h, y) * xj } else { 0.0 };
        sum += g;
        sum_sq += g * g;
    }
    Ok(Estimate::from_sums(sum, sum_sq, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowdownCheck {
    pub lambda: f64,
    pub biased: Estimate,
    pub balanced: Estimate,
    pub ratio: f64,
    /// Delta-method standard error of `ratio` (independent streams).
    pub ratio_std_error: f64,
    pub expected: f64,
}

/// Core-coordinate gradient of the core neuron `σ(x_{c1} + x_{c2} - 1)` when
/// `h = ln(λ/(1-λ)) f_s` (core part zero), under `D_λ` and under `D_{1/2}`
/// (where the Bayes margin, and so `h`, is zero). Layout `s = c = 2, u = 1`.
pub fn slowdown_gradient_check(lambda: f64, samples: usize, seed: u64) -> Result<SlowdownCheck> {
    if !(lambda > 0.5 && lambda < 1.0) {
        return Err(Error::param("lambda must lie in (0.5, 1)"));
    }
    if samples < 2 {
        return Err(Error::param("need at least two samples"));
    }
    let estimate = |lam: f64, stream: u64| -> Result<Estimate> {
        let task = SpuriousTaskConfig::parity(2, 2, 1, lam)?;
        let fs = task.spurious_feature().expect("s > 0");
        let margin = bayes_margin(lam)?;
        let mut sampler = SpuriousSampler::new(&task, rng::stream(seed, &[tag::THEORY, stream]))?;
        let mut x = vec![1i8; task.n()];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let (y, _) = sampler.sample_into(&mut x)?;
            let h = margin * f64::from(fs.eval_unchecked(&x));
            let pre = f64::from(x[2]) + f64::from(x[3]) - 1.0;
            let g = if pre > 0.0 { loss_derivative(h, y) * f64::from(x[2]) } else { 0.0 };
            sum += g;
            sum_sq += g * g;
        }
        Ok(Estimate::from_sums(sum, sum_sq, samples))
    };
    let biased = estimate(lambda, 0)?;
    let balanced = estimate(0.5, 1)?;
    let ratio = biased.value / balanced.value;
    let rel = (biased.std_error / biased.value).powi(2) + (balanced.std_error / balanced.value).powi(2);
    Ok(SlowdownCheck {
        lambda,
        biased,
        balanced,
        ratio,
        ratio_std_error: ratio.abs() * rel.sqrt(),
        expected: slowdown_factor(lambda)?,
    })
}

/// Exact ReLU representation of the `k`-parity through the Hamming weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityConstruction {
    pub k: usize,
    /// `b_j = k + 1 - 2j`, `j = 0..=k`.
    pub biases: Vec<i64>,
    /// `M[i][j] = σ((k - 2i) + b_j)`, row `i` = inputs with `i` entries equal to -1.
    pub matrix: Vec<Vec<i64>>,
    pub weights: Vec<i64>,
    pub norm: f64,
    /// Largest `|Σ_j u_j σ(Σx + b_j) - χ(x)|` over all `2^k` inputs.
    pub max_residual: i64,
}

impl ParityConstruction {
    pub fn is_exact(&self) -> bool {
        self.max_residual == 0
    }
}

pub const MAX_PARITY_CONSTRUCTION: usize = 24;

/// Solves `M u = ((-1)^i)_i` by back-substitution (the anti-diagonal of `M` is
/// all ones) and verifies the result on every input.
pub fn parity_relu_construction(k: usize) -> Result<ParityConstruction> {
    if k == 0 || k > MAX_PARITY_CONSTRUCTION {
        return Err(Error::param(format!("k must lie in 1..={MAX_PARITY_CONSTRUCTION}, got {k}")));
    }
    let ki = k as i64;
    let biases: Vec<i64> = (0..=ki).map(|j| ki + 1 - 2 * j).collect();
    let matrix: Vec<Vec<i64>> = (0..=ki)
        .map(|i| biases.iter().map(|&b| (ki - 2 * i + b).max(0)).collect())
        .collect();
    let mut u = vec![0i128; k + 1];
    for i in (0..=k).rev() {
        let col = k - i;
        if matrix[i][col] != 1 {
            return Err(Error::Numerical(format!("unexpected pivot {} in row {i}", matrix[i][col])));
        }
        let y: i128 = if i % 2 == 0 { 1 } else { -1 };
        let partial: i128 = (0..col).map(|j| i128::from(matrix[i][j]) * u[j]).sum();
        u[col] = y - partial;
    }
    let weights: Vec<i64> = u
        .iter()
        .map(|&v| i64::try_from(v).map_err(|_| Error::Numerical("construction weight overflow".into())))
        .collect::<Result<_>>()?;
    let mut max_residual = 0i64;
    for idx in 0u64..(1u64 << k) {
        let minus = idx.count_ones() as i64;
        let sum = ki - 2 * minus;
        let value: i128 = biases
            .iter()
            .zip(&u)
            .map(|(&b, &uj)| uj * i128::from((sum + b).max(0)))
            .sum();
        let parity: i128 = if minus % 2 == 0 { 1 } else { -1 };
        max_residual = max_residual.max((value - parity).unsigned_abs() as i64);
    }
    let norm = weights.iter().map(|&w| (w as f64).powi(2)).sum::<f64>().sqrt();
    Ok(ParityConstruction {
        k,
        biases,
        matrix,
        weights,
        norm,
        max_residual,
    })
}

/// Width-`k+1` two-layer model computing `χ` of the `k` coordinates starting
/// at `offset` in an `n`-dimensional input.
pub fn parity_relu_model(k: usize, n: usize, offset: usize) -> Result<MlpModel<f64>> {
    if offset + k > n {
        return Err(Error::param("parity support exceeds input dimension"));
    }
    let cons = parity_relu_construction(k)?;
    let rows = (0..=k)
        .map(|_| (0..n).map(|i| if (offset..offset + k).contains(&i) { 1.0 } else { 0.0 }).collect())
        .collect();
    MlpModel::two_layer(
        rows,
        cons.biases.iter().map(|&b| b as f64).collect(),
        cons.weights.iter().map(|&u| u as f64).collect(),
    )
}

/// Model computing `±f` for a parity feature, via [`parity_relu_model`].
pub fn feature_model(feature: &FeatureSpec, n: usize, negate: bool) -> Result<MlpModel<f64>> {
    if feature.kind != crate::boolfn::FeatureKind::Parity {
        return Err(Error::Unsupported("exact ReLU models exist for parity features only".into()));
    }
    let m = parity_relu_model(feature.degree, n, feature.offset)?;
    if negate {
        let out = m.output.iter().map(|v| -v).collect();
        m.last_layer_replace(out, 0.0)
    } else {
        Ok(m)
    }
}

/// Every analytic quantity for one `(n, s, c, λ, γ_c)` setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub n: usize,
    pub s: usize,
    pub c: usize,
    pub lambda: f64,
    pub gamma_c: f64,
    pub xi_table: BTreeMap<usize, f64>,
    pub spurious_gap: f64,
    pub core_gap: f64,
    pub bayes_margin: f64,
    pub slowdown_factor: f64,
    pub gamma_s_star: f64,
    pub gradient_ratio: f64,
}

pub fn theory_report(n: usize, s: usize, c: usize, lambda: f64, gamma_c: f64) -> Result<TheoryReport> {
    if !(lambda > 0.5 && lambda < 1.0) && lambda != 0.5 {
        return Err(Error::param("lambda must lie in [0.5, 1)"));
    }
    let (spurious_gap, core_gap) = init_gradient_gaps(n, s, c, lambda)?;
    let mut xi_table = BTreeMap::new();
    for k in [s - 1, s + 1, c - 1, c + 1] {
        xi_table.insert(k, majority_fourier_xi(n, k)?);
    }
    Ok(TheoryReport {
        n,
        s,
        c,
        lambda,
        gamma_c,
        xi_table,
        spurious_gap,
        core_gap,
        bayes_margin: bayes_margin(lambda)?,
        slowdown_factor: slowdown_factor(lambda)?,
        gamma_s_star: optimal_spurious_margin(gamma_c, lambda, 1e-10)?,
        gradient_ratio: core_gradient_ratio(gamma_c, lambda)?,
    })
}

impl TheoryReport {
    /// Aligned `name  value` lines.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("n".into(), self.n.to_string()),
            ("s".into(), self.s.to_string()),
            ("c".into(), self.c.to_string()),
            ("lambda".into(), fmt_value(self.lambda)),
            ("gamma_c".into(), fmt_value(self.gamma_c)),
        ];
        for (k, v) in &self.xi_table {
            rows.push((format!("xi_{k}"), fmt_value(*v)));
        }
        rows.extend([
            ("spurious_gap".into(), fmt_value(self.spurious_gap)),
            ("core_gap".into(), fmt_value(self.core_gap)),
            ("bayes_margin".into(), fmt_value(self.bayes_margin)),
            ("slowdown_factor".into(), fmt_value(self.slowdown_factor)),
            ("gamma_s_star".into(), fmt_value(self.gamma_s_star)),
            ("gradient_ratio".into(), fmt_value(self.gradient_ratio)),
        ]);
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn fmt_value(v: f64) -> String {
    crate::experiment::csv::format_decimal(v)
}
