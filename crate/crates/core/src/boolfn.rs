//! Boolean feature functions over `{+1, -1}^n` and their Fourier analysis.
//!
//! A [`FeatureSpec`] evaluates a parity, threshold-staircase or majority
//! function on a contiguous slice of a [`BitVector`]. Fourier coefficients
//! `f̂(S) = E[f(x) χ_S(x)]` are computed exactly by enumeration (up to
//! [`ENUMERATION_LIMIT`] variables), by weight-class counting for majority,
//! or by Monte-Carlo with a standard error.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest number of variables enumerated exhaustively.
pub const ENUMERATION_LIMIT: usize = 24;

/// A point of the Boolean hypercube; every entry is `+1` or `-1`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector(Vec<i8>);

impl BitVector {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::param("bit vector must be non-empty"));
        }
        if let Some(b) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::param(format!("bit value {b} is not +1 or -1")));
        }
        Ok(BitVector(bits))
    }

    pub fn ones(n: usize) -> Self {
        BitVector(vec![1; n.max(1)])
    }

    /// Decode the `index`-th point of the cube: bit `i` of `index` set means `x_i = -1`.
    pub fn from_index(index: u64, n: usize) -> Self {
        let mut bits = vec![1i8; n.max(1)];
        fill_from_index(index, &mut bits);
        BitVector(bits)
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut bits = vec![1i8; n.max(1)];
        fill_uniform(rng, &mut bits);
        BitVector(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }

    /// Inverse of [`BitVector::from_index`].
    pub fn index(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b < 0)
            .fold(0u64, |acc, (i, _)| acc | (1 << i))
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::Parse(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        BitVector::new(bits)
    }
}

impl AsRef<[i8]> for BitVector {
    fn as_ref(&self) -> &[i8] {
        &self.0
    }
}

pub(crate) fn fill_from_index(index: u64, out: &mut [i8]) {
    for (i, b) in out.iter_mut().enumerate() {
        *b = if (index >> i) & 1 == 1 { -1 } else { 1 };
    }
}

pub(crate) fn fill_uniform<R: Rng + ?Sized>(rng: &mut R, out: &mut [i8]) {
    let mut word = 0u64;
    for (i, b) in out.iter_mut().enumerate() {
        if i % 64 == 0 {
            word = rng.gen();
        }
        *b = if (word >> (i % 64)) & 1 == 1 { -1 } else { 1 };
    }
}

/// `χ_S(x) = ∏_{i ∈ S} x_i`.
#[inline]
pub fn chi(x: &[i8], subset: &[usize]) -> i8 {
    subset.iter().fold(1i8, |acc, &i| acc * x[i])
}

#[inline]
fn product(bits: &[i8]) -> i8 {
    bits.iter().fold(1i8, |acc, &b| acc * b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Parity,
    #[serde(alias = "threshold_staircase", alias = "sc")]
    Staircase,
    Majority,
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parity" | "chi" => Ok(FeatureKind::Parity),
            "staircase" | "sc" | "threshold_staircase" => Ok(FeatureKind::Staircase),
            "majority" | "maj" => Ok(FeatureKind::Majority),
            other => Err(Error::Parse(format!("unknown feature kind {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Parity => "parity",
            FeatureKind::Staircase => "staircase",
            FeatureKind::Majority => "majority",
        })
    }
}

/// A Boolean feature acting on the first `degree` coordinates of the slice
/// `offset..offset + len` of an input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub degree: usize,
    pub offset: usize,
    pub len: usize,
}

impl FeatureSpec {
    pub fn new(kind: FeatureKind, degree: usize, offset: usize, len: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::param("feature degree must be positive"));
        }
        if degree > len {
            return Err(Error::param(format!(
                "feature degree {degree} exceeds slice length {len}"
            )));
        }
        if kind == FeatureKind::Majority && degree % 2 == 0 {
            return Err(Error::param(format!(
                "majority needs an odd number of inputs, got {degree}"
            )));
        }
        Ok(FeatureSpec {
            kind,
            degree,
            offset,
            len,
        })
    }

    pub fn parity(degree: usize, offset: usize, len: usize) -> Result<Self> {
        Self::new(FeatureKind::Parity, degree, offset, len)
    }

    pub fn staircase(degree: usize, offset: usize, len: usize) -> Result<Self> {
        Self::new(FeatureKind::Staircase, degree, offset, len)
    }

    /// Majority over the whole slice.
    pub fn majority(offset: usize, len: usize) -> Result<Self> {
        Self::new(FeatureKind::Majority, len, offset, len)
    }

    /// The input coordinates the feature actually reads.
    pub fn support(&self) -> Range<usize> {
        self.offset..self.offset + self.degree
    }

    pub fn slice(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }

    fn check_bounds(&self, n: usize) -> Result<()> {
        if self.offset + self.len > n {
            return Err(Error::Dimension {
                expected: self.offset + self.len,
                got: n,
            });
        }
        Ok(())
    }

    /// Evaluate on a full input vector, checking bounds.
    pub fn eval(&self, x: &[i8]) -> Result<i8> {
        self.check_bounds(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    /// Evaluate without the bounds check; panics if `x` is too short.
    #[inline]
    pub fn eval_unchecked(&self, x: &[i8]) -> i8 {
        let bits = &x[self.support()];
        match self.kind {
            FeatureKind::Parity => product(bits),
            FeatureKind::Staircase => {
                if staircase_terms(bits) >= 0 {
                    1
                } else {
                    -1
                }
            }
            FeatureKind::Majority => {
                let sum: i32 = bits.iter().map(|&b| b as i32).sum();
                if sum > 0 {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// Exact mean of the feature under the uniform distribution.
    pub fn mean(&self) -> Result<f64> {
        if self.degree > ENUMERATION_LIMIT {
            return Err(Error::Resource(format!(
                "mean of a degree-{} feature needs 2^{} evaluations",
                self.degree, self.degree
            )));
        }
        let local = FeatureSpec {
            offset: 0,
            len: self.degree,
            ..*self
        };
        let total = enumerate_sum(self.degree, |x| local.eval_unchecked(x) as i64);
        Ok(total as f64 / (1u64 << self.degree) as f64)
    }

    /// `P(f = +1)` under the uniform distribution.
    pub fn positive_rate(&self) -> Result<f64> {
        Ok((1.0 + self.mean()?) / 2.0)
    }

    pub fn is_unbiased(&self) -> Result<bool> {
        Ok(self.mean()? == 0.0)
    }
}

#[inline]
fn staircase_terms(bits: &[i8]) -> i32 {
    let mut prefix = 1i32;
    let mut sum = 0i32;
    for &b in bits {
        prefix *= b as i32;
        sum += prefix;
    }
    sum
}

fn expect_kind(spec: &FeatureSpec, kind: FeatureKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::param(format!(
            "expected a {kind} feature, got {}",
            spec.kind
        )));
    }
    Ok(())
}

/// `χ_d` over the designated coordinates.
pub fn eval_parity(x: &BitVector, spec: &FeatureSpec) -> Result<i8> {
    expect_kind(spec, FeatureKind::Parity)?;
    spec.eval(x.as_slice())
}

/// `Σ_{k=1..d} ∏_{i≤k} x_i` over the designated coordinates.
pub fn staircase_sum(x: &BitVector, spec: &FeatureSpec) -> Result<i32> {
    spec.check_bounds(x.len())?;
    Ok(staircase_terms(&x.as_slice()[spec.support()]))
}

/// `sc_d(x) = +1` iff the staircase sum is non-negative.
pub fn eval_threshold_staircase(x: &BitVector, spec: &FeatureSpec) -> Result<i8> {
    expect_kind(spec, FeatureKind::Staircase)?;
    spec.eval(x.as_slice())
}

pub fn eval_majority(x: &BitVector, spec: &FeatureSpec) -> Result<i8> {
    expect_kind(spec, FeatureKind::Majority)?;
    spec.eval(x.as_slice())
}

/// Sum `g(x)` over all `2^n` points of the cube.
pub(crate) fn enumerate_sum<F: FnMut(&[i8]) -> i64>(n: usize, mut g: F) -> i64 {
    let mut x = vec![1i8; n];
    let mut total = 0i64;
    for index in 0..(1u64 << n) {
        fill_from_index(index, &mut x);
        total += g(&x);
    }
    total
}

fn check_enumerable(n: usize) -> Result<()> {
    if n > ENUMERATION_LIMIT {
        return Err(Error::Resource(format!(
            "exact enumeration over {n} variables exceeds the 2^{ENUMERATION_LIMIT} budget"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FourierMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// A point estimate with its standard error (zero for exact values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
        }
    }

    /// Mean and standard error of a sample, accumulated as running sums.
    pub fn from_sums(sum: f64, sum_sq: f64, count: usize) -> Self {
        let n = count as f64;
        let mean = sum / n;
        let var = if count > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }

    /// Whether `target` lies within `k` standard errors (inclusive).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Fourier coefficient `f̂(S) = E_{x uniform}[f(x) χ_S(x)]` of a ±1-valued
/// function on `n` variables.
pub fn fourier_coefficient<F>(f: F, n: usize, subset: &[usize], mode: FourierMode) -> Result<Estimate>
where
    F: Fn(&[i8]) -> i8,
{
    if let Some(&i) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::Dimension {
            expected: n,
            got: i + 1,
        });
    }
    match mode {
        FourierMode::Exact => {
            check_enumerable(n)?;
            let total = enumerate_sum(n, |x| (f(x) * chi(x, subset)) as i64);
            Ok(Estimate::exact(total as f64 / (1u64 << n) as f64))
        }
        FourierMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::param("Monte-Carlo estimate needs at least one sample"));
            }
            let mut rng = rng::stream(seed, &[rng::tag::METRIC]);
            let mut x = vec![1i8; n];
            let mut sum = 0i64;
            for _ in 0..samples {
                fill_uniform(&mut rng, &mut x);
                sum += (f(&x) * chi(&x, subset)) as i64;
            }
            // Terms are ±1, so the second moment is exactly 1.
            Ok(Estimate::from_sums(sum as f64, samples as f64, samples))
        }
    }
}

/// Full Fourier spectrum by the fast Walsh–Hadamard transform. Entry `mask`
/// holds `f̂(S)` for `S = {i : bit i of mask set}`.
pub fn fourier_spectrum<F>(f: F, n: usize) -> Result<Vec<f64>>
where
    F: Fn(&[i8]) -> f64,
{
    check_enumerable(n)?;
    let size = 1usize << n;
    let mut x = vec![1i8; n];
    let mut table: Vec<f64> = (0..size)
        .map(|index| {
            fill_from_index(index as u64, &mut x);
            f(&x)
        })
        .collect();
    let mut h = 1;
    while h < size {
        for block in (0..size).step_by(2 * h) {
            for i in block..block + h {
                let (a, b) = (table[i], table[i + h]);
                table[i] = a + b;
                table[i + h] = a - b;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / size as f64;
    table.iter_mut().for_each(|v| *v *= scale);
    Ok(table)
}

/// Exact binomial coefficient; panics on overflow of `u128` (n > 128).
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication.
        acc = acc
            .checked_mul((n - i) as u128)
            .expect("binomial overflow")
            / (i as u128 + 1);
    }
    acc
}

/// Closed form of the Fourier coefficient of `sc_d` on each of its staircase
/// terms `{1}, {1,2}, …, {1..d}`.
pub fn staircase_term_coefficient(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::param(format!("staircase degree must be at least 2, got {d}")));
    }
    if d > 120 {
        return Err(Error::param(format!("staircase degree {d} too large")));
    }
    let d = d as u64;
    let (num, pow) = if d % 2 == 0 {
        (binomial(d - 1, d / 2 - 1), d - 1)
    } else {
        (binomial(d - 2, (d - 1) / 2), d - 2)
    };
    Ok(num as f64 / 2f64.powi(pow as i32))
}

/// `ξ_k = E[Maj_n(x) χ_{[k]}(x)]`, computed by counting inputs by the number
/// of `-1` entries inside and outside `[k]`.
pub fn majority_fourier_xi(n: usize, k: usize) -> Result<f64> {
    if n % 2 == 0 {
        return Err(Error::param(format!("majority needs odd n, got {n}")));
    }
    if k > n {
        return Err(Error::param(format!("k = {k} exceeds n = {n}")));
    }
    if n > 120 {
        return Err(Error::param(format!("n = {n} too large for exact counting")));
    }
    if k % 2 == 0 {
        return Ok(0.0);
    }
    let (n64, k64) = (n as u64, k as u64);
    let mut total: i128 = 0;
    for inside in 0..=k64 {
        let chi_sign: i128 = if inside % 2 == 0 { 1 } else { -1 };
        let c_in = binomial(k64, inside) as i128;
        for outside in 0..=(n64 - k64) {
            let minus = inside + outside;
            let maj: i128 = if 2 * minus < n64 { 1 } else { -1 };
            total += chi_sign * maj * c_in * binomial(n64 - k64, outside) as i128;
        }
    }
    Ok(total as f64 / 2f64.powi(n as i32))
}

/// The `n^{-(k-1)/2}` growth-rate proxy for `|ξ_k|`. Diagnostic only.
pub fn xi_magnitude_scale(n: usize, k: usize) -> f64 {
    (n as f64).powf(-((k as f64) - 1.0) / 2.0)
}
