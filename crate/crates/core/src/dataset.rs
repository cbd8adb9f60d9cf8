//! The spurious mixture distribution `D_λ`.
//!
//! Inputs are laid out as `x = (x_s, x_c, x_u)`: a spurious block of length
//! `s`, a core block of length `c` and a noise block of length `u`. The label
//! is `y = f_c(x_c)`. With probability `λ` a sample comes from the uniform
//! distribution conditioned on `f_s(x_s) = f_c(x_c)` (the majority group),
//! otherwise from the uniform distribution conditioned on disagreement.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::boolfn::{self, BitVector, FeatureKind, FeatureSpec, FourierMode, ENUMERATION_LIMIT};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Rejection-sampling budget for one conditional draw.
pub const MAX_REJECTION_TRIES: usize = 10_000;

/// Feature choice for one block. `degree` defaults to the block length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFeature {
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
}

impl BlockFeature {
    pub fn new(kind: FeatureKind) -> Self {
        BlockFeature { kind, degree: None }
    }

    pub fn with_degree(kind: FeatureKind, degree: usize) -> Self {
        BlockFeature {
            kind,
            degree: Some(degree),
        }
    }
}

/// Which of the two features a metric or probe refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTarget {
    Core,
    Spurious,
}

impl FromStr for FeatureTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "core" => Ok(FeatureTarget::Core),
            "spurious" => Ok(FeatureTarget::Spurious),
            other => Err(Error::Parse(format!("unknown feature target {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureTarget::Core => "core",
            FeatureTarget::Spurious => "spurious",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Spurious,
    Core,
    Noise,
}

/// Definition of `D_λ`: block lengths, confounder strength and the two features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuriousTaskConfig {
    #[serde(rename = "s")]
    pub spurious_len: usize,
    #[serde(rename = "c")]
    pub core_len: usize,
    #[serde(rename = "u", default)]
    pub noise_len: usize,
    pub lambda: f64,
    #[serde(default = "default_parity")]
    pub spurious: BlockFeature,
    #[serde(default = "default_parity")]
    pub core: BlockFeature,
}

fn default_parity() -> BlockFeature {
    BlockFeature::new(FeatureKind::Parity)
}

impl SpuriousTaskConfig {
    pub fn new(
        s: usize,
        c: usize,
        u: usize,
        lambda: f64,
        spurious: BlockFeature,
        core: BlockFeature,
    ) -> Result<Self> {
        let cfg = SpuriousTaskConfig {
            spurious_len: s,
            core_len: c,
            noise_len: u,
            lambda,
            spurious,
            core,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-block parities on both sides.
    pub fn parity(s: usize, c: usize, u: usize, lambda: f64) -> Result<Self> {
        let p = BlockFeature::new(FeatureKind::Parity);
        Self::new(s, c, u, lambda, p, p)
    }

    /// Full-block threshold staircases on both sides.
    pub fn staircase(s: usize, c: usize, u: usize, lambda: f64) -> Result<Self> {
        let p = BlockFeature::new(FeatureKind::Staircase);
        Self::new(s, c, u, lambda, p, p)
    }

    pub fn n(&self) -> usize {
        self.spurious_len + self.core_len + self.noise_len
    }

    pub fn block(&self, block: Block) -> Range<usize> {
        let (s, c) = (self.spurious_len, self.core_len);
        match block {
            Block::Spurious => 0..s,
            Block::Core => s..s + c,
            Block::Noise => s + c..self.n(),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        SpuriousTaskConfig {
            lambda,
            ..self.clone()
        }
    }

    /// `f_s` over the spurious block; `None` when the block is empty.
    pub fn spurious_feature(&self) -> Option<FeatureSpec> {
        if self.spurious_len == 0 {
            return None;
        }
        let degree = self.spurious.degree.unwrap_or(self.spurious_len);
        FeatureSpec::new(self.spurious.kind, degree, 0, self.spurious_len).ok()
    }

    pub fn core_feature(&self) -> FeatureSpec {
        let degree = self.core.degree.unwrap_or(self.core_len);
        FeatureSpec::new(self.core.kind, degree, self.spurious_len, self.core_len)
            .expect("validated core feature")
    }

    pub fn feature(&self, target: FeatureTarget) -> Option<FeatureSpec> {
        match target {
            FeatureTarget::Core => Some(self.core_feature()),
            FeatureTarget::Spurious => self.spurious_feature(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Configuration(m));
        if self.core_len == 0 {
            return cfg_err("core block must be non-empty".into());
        }
        if !(0.5..=1.0).contains(&self.lambda) {
            return cfg_err(format!("lambda must lie in [0.5, 1], got {}", self.lambda));
        }
        let core_degree = self.core.degree.unwrap_or(self.core_len);
        FeatureSpec::new(self.core.kind, core_degree, self.spurious_len, self.core_len)
            .map_err(|e| Error::Configuration(format!("core feature: {e}")))?;
        if self.spurious_len == 0 {
            if self.lambda != 0.5 {
                return cfg_err("a task without a spurious block must use lambda = 0.5".into());
            }
        } else {
            let degree = self.spurious.degree.unwrap_or(self.spurious_len);
            FeatureSpec::new(self.spurious.kind, degree, 0, self.spurious_len)
                .map_err(|e| Error::Configuration(format!("spurious feature: {e}")))?;
        }
        for (name, spec) in [
            ("core", Some(self.core_feature())),
            ("spurious", self.spurious_feature()),
        ] {
            if let Some(spec) = spec {
                if spec.degree <= ENUMERATION_LIMIT {
                    let p = spec.positive_rate()?;
                    if p == 0.0 || p == 1.0 {
                        return cfg_err(format!("{name} feature is constant"));
                    }
                }
            }
        }
        Ok(())
    }

    fn feature_bias(spec: Option<FeatureSpec>) -> Result<Option<f64>> {
        spec.map(|s| s.mean()).transpose()
    }

    /// True when every present feature has mean zero under the uniform distribution.
    pub fn features_unbiased(&self) -> Result<bool> {
        let core = self.core_feature().is_unbiased()?;
        let spur = match self.spurious_feature() {
            Some(s) => s.is_unbiased()?,
            None => true,
        };
        Ok(core && spur)
    }

    /// True when at least one feature is unbiased, which is what the mixture
    /// identity and the label-coefficient formula need.
    pub fn some_feature_unbiased(&self) -> Result<bool> {
        let core = self.core_feature().is_unbiased()?;
        let spur = match self.spurious_feature() {
            Some(s) => s.is_unbiased()?,
            None => true,
        };
        Ok(core || spur)
    }

    /// `P_{x uniform}(f_s(x_s) = f_c(x_c))`.
    pub fn agreement_probability(&self) -> Result<f64> {
        let pc = self.core_feature().positive_rate()?;
        match Self::feature_bias(self.spurious_feature())? {
            None => Ok(1.0),
            Some(ms) => {
                let ps = (1.0 + ms) / 2.0;
                Ok(ps * pc + (1.0 - ps) * (1.0 - pc))
            }
        }
    }

    /// Even `s` and `c`, odd `u`, parity features: the layout the
    /// initialization-gradient formulas assume.
    pub fn check_theory_layout(&self) -> Result<()> {
        let n = self.n();
        if n % 2 == 0 || self.spurious_len % 2 != 0 || self.core_len % 2 != 0 || self.spurious_len == 0
        {
            return Err(Error::param(format!(
                "theory layout needs positive even s, c and odd n (s={}, c={}, u={})",
                self.spurious_len, self.core_len, self.noise_len
            )));
        }
        let full_parity = |b: &BlockFeature, len: usize| {
            b.kind == FeatureKind::Parity && b.degree.unwrap_or(len) == len
        };
        if !full_parity(&self.spurious, self.spurious_len) || !full_parity(&self.core, self.core_len) {
            return Err(Error::param("theory layout needs full-block parity features"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Majority,
    Minority,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Majority => "majority",
            Group::Minority => "minority",
        })
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Group::Majority),
            "minority" => Ok(Group::Minority),
            other => Err(Error::Parse(format!("unknown group {other:?}"))),
        }
    }
}

/// `(x, y = f_c(x_c))` with its group: majority iff `f_s(x_s) = f_c(x_c)`.
/// Tasks without a spurious block tag every sample as majority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub x: BitVector,
    pub y: i8,
    pub group: Group,
}

/// Draws i.i.d. samples from `D_λ`, owning its random stream.
#[derive(Debug, Clone)]
pub struct SpuriousSampler {
    config: SpuriousTaskConfig,
    core: FeatureSpec,
    spurious: Option<FeatureSpec>,
    strategy: Strategy,
    rng: StreamRng,
}

#[derive(Debug, Clone, Copy)]
enum Strategy {
    /// Draw `x_c` first, then `x_s` conditioned on the required `f_s` value.
    CoreFirst,
    /// Draw `x_s` first, then `x_c` conditioned on the required `f_c` value.
    SpuriousFirst,
    /// Resample both blocks until the agreement event matches.
    Joint,
}

impl SpuriousSampler {
    pub fn new(config: &SpuriousTaskConfig, rng: StreamRng) -> Result<Self> {
        config.validate()?;
        let spurious = config.spurious_feature();
        let strategy = match spurious {
            Some(s) if s.degree <= ENUMERATION_LIMIT && !s.is_unbiased()? => {
                let core = config.core_feature();
                if core.degree <= ENUMERATION_LIMIT && core.is_unbiased()? {
                    Strategy::SpuriousFirst
                } else {
                    Strategy::Joint
                }
            }
            _ => Strategy::CoreFirst,
        };
        Ok(SpuriousSampler {
            config: config.clone(),
            core: config.core_feature(),
            spurious,
            strategy,
            rng,
        })
    }

    pub fn config(&self) -> &SpuriousTaskConfig {
        &self.config
    }

    /// Replace the random stream, keeping the precomputed sampling plan.
    pub fn reseed(&mut self, rng: StreamRng) {
        self.rng = rng;
    }

    /// Fill `x` (length `n`) with one draw; returns `(y, group)`.
    pub fn sample_into(&mut self, x: &mut [i8]) -> Result<(i8, Group)> {
        let cfg = &self.config;
        debug_assert_eq!(x.len(), cfg.n());
        let agree = self.rng.gen_bool(cfg.lambda);
        let group = if agree { Group::Majority } else { Group::Minority };
        let Some(spur) = self.spurious else {
            boolfn::fill_uniform(&mut self.rng, x);
            return Ok((self.core.eval_unchecked(x), Group::Majority));
        };
        let core_range = cfg.block(Block::Core);
        let spur_range = cfg.block(Block::Spurious);
        let noise_range = cfg.block(Block::Noise);
        boolfn::fill_uniform(&mut self.rng, &mut x[noise_range]);
        let matches = |x: &[i8]| (spur.eval_unchecked(x) == self.core.eval_unchecked(x)) == agree;
        match self.strategy {
            Strategy::CoreFirst => {
                boolfn::fill_uniform(&mut self.rng, &mut x[core_range]);
                for _ in 0..MAX_REJECTION_TRIES {
                    boolfn::fill_uniform(&mut self.rng, &mut x[spur_range.clone()]);
                    if matches(x) {
                        return Ok((self.core.eval_unchecked(x), group));
                    }
                }
            }
            Strategy::SpuriousFirst => {
                boolfn::fill_uniform(&mut self.rng, &mut x[spur_range]);
                for _ in 0..MAX_REJECTION_TRIES {
                    boolfn::fill_uniform(&mut self.rng, &mut x[core_range.clone()]);
                    if matches(x) {
                        return Ok((self.core.eval_unchecked(x), group));
                    }
                }
            }
            Strategy::Joint => {
                for _ in 0..MAX_REJECTION_TRIES {
                    boolfn::fill_uniform(&mut self.rng, &mut x[0..cfg.spurious_len + cfg.core_len]);
                    if matches(x) {
                        return Ok((self.core.eval_unchecked(x), group));
                    }
                }
            }
        }
        Err(Error::Configuration(format!(
            "rejection sampling exceeded {MAX_REJECTION_TRIES} tries; the features cannot {} ",
            if agree { "agree" } else { "disagree" }
        )))
    }

    pub fn sample(&mut self) -> Result<LabeledSample> {
        let mut x = vec![1i8; self.config.n()];
        let (y, group) = self.sample_into(&mut x)?;
        Ok(LabeledSample {
            x: BitVector::new(x)?,
            y,
            group,
        })
    }
}

/// One draw from `D_λ` using the caller's generator.
pub fn sample(config: &SpuriousTaskConfig, rng: &mut StreamRng) -> Result<LabeledSample> {
    let mut sampler = SpuriousSampler::new(config, rng.clone())?;
    let out = sampler.sample();
    *rng = sampler.rng;
    out
}

fn check_pmf_input(config: &SpuriousTaskConfig, x: &BitVector) -> Result<()> {
    if config.n() > ENUMERATION_LIMIT {
        return Err(Error::Resource(format!(
            "exact probability mass needs n <= {ENUMERATION_LIMIT}, got {}",
            config.n()
        )));
    }
    if x.len() != config.n() {
        return Err(Error::Dimension {
            expected: config.n(),
            got: x.len(),
        });
    }
    Ok(())
}

fn same_pmf(config: &SpuriousTaskConfig, x: &BitVector, agree_prob: f64) -> f64 {
    let uniform = 0.5f64.powi(config.n() as i32);
    match config.spurious_feature() {
        None => uniform,
        Some(spur) => {
            let agrees = spur.eval_unchecked(x.as_slice()) == config.core_feature().eval_unchecked(x.as_slice());
            if agrees {
                uniform / agree_prob
            } else {
                0.0
            }
        }
    }
}

/// `λ P_same(x) + (1 - λ) P_diff(x)` from the conditional definitions.
pub fn exact_pmf(config: &SpuriousTaskConfig, x: &BitVector) -> Result<f64> {
    check_pmf_input(config, x)?;
    let uniform = 0.5f64.powi(config.n() as i32);
    let Some(spur) = config.spurious_feature() else {
        return Ok(uniform);
    };
    let agree_prob = config.agreement_probability()?;
    let agrees = spur.eval_unchecked(x.as_slice()) == config.core_feature().eval_unchecked(x.as_slice());
    let p_same = if agrees { uniform / agree_prob } else { 0.0 };
    let p_diff = if agrees { 0.0 } else { uniform / (1.0 - agree_prob) };
    Ok(config.lambda * p_same + (1.0 - config.lambda) * p_diff)
}

/// `2(1 - λ) P_unif(x) + (2λ - 1) P_same(x)`; valid when a feature is unbiased.
pub fn mixture_pmf(config: &SpuriousTaskConfig, x: &BitVector) -> Result<f64> {
    check_pmf_input(config, x)?;
    if !config.some_feature_unbiased()? {
        return Err(Error::param("mixture form needs at least one unbiased feature"));
    }
    let uniform = 0.5f64.powi(config.n() as i32);
    let agree_prob = config.agreement_probability()?;
    Ok(2.0 * (1.0 - config.lambda) * uniform
        + (2.0 * config.lambda - 1.0) * same_pmf(config, x, agree_prob))
}

fn feature_coefficient(spec: Option<FeatureSpec>, subset: &[usize]) -> Result<f64> {
    let Some(spec) = spec else {
        return Ok(0.0);
    };
    let support = spec.support();
    if !subset.iter().all(|i| support.contains(i)) {
        return Ok(0.0);
    }
    let local: Vec<usize> = subset.iter().map(|i| i - spec.offset).collect();
    let local_spec = FeatureSpec {
        offset: 0,
        len: spec.degree,
        ..spec
    };
    Ok(boolfn::fourier_coefficient(
        |x| local_spec.eval_unchecked(x),
        spec.degree,
        &local,
        FourierMode::Exact,
    )?
    .value)
}

/// `E_{D_λ}[χ_S(x) y] = f̂_c(S) + (2λ - 1) f̂_s(S)`.
pub fn label_fourier(config: &SpuriousTaskConfig, subset: &[usize]) -> Result<f64> {
    if let Some(&i) = subset.iter().find(|&&i| i >= config.n()) {
        return Err(Error::Dimension {
            expected: config.n(),
            got: i + 1,
        });
    }
    if !config.some_feature_unbiased()? {
        return Err(Error::param("label coefficients need at least one unbiased feature"));
    }
    let core = feature_coefficient(Some(config.core_feature()), subset)?;
    let spur = feature_coefficient(config.spurious_feature(), subset)?;
    Ok(core + (2.0 * config.lambda - 1.0) * spur)
}

/// Chi-square survival probability for observed counts against expected counts.
pub fn chi_square_p_value(observed: &[u64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::param("chi-square needs matching tables with at least two cells"));
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            return Ok(0.0);
        }
    }
    let df = (cells.max(2) - 1) as f64;
    let dist = ChiSquared::new(df).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(dist.sf(stat))
}

fn block_index(x: &[i8], range: Range<usize>) -> usize {
    x[range]
        .iter()
        .enumerate()
        .filter(|(_, &b)| b < 0)
        .fold(0usize, |acc, (i, _)| acc | (1 << i))
}

/// Goodness of fit of one block's sampled marginal against the uniform distribution.
pub fn marginal_check(config: &SpuriousTaskConfig, block: Block, samples: usize, seed: u64) -> Result<f64> {
    let range = config.block(block);
    if range.is_empty() || range.len() > 16 {
        return Err(Error::param(format!(
            "marginal check needs a block length in 1..=16, got {}",
            range.len()
        )));
    }
    let cells = 1usize << range.len();
    let mut counts = vec![0u64; cells];
    let mut sampler = SpuriousSampler::new(config, rng::stream(seed, &[rng::tag::DATASET]))?;
    let mut x = vec![1i8; config.n()];
    for _ in 0..samples {
        sampler.sample_into(&mut x)?;
        counts[block_index(&x, range.clone())] += 1;
    }
    let expected = vec![samples as f64 / cells as f64; cells];
    chi_square_p_value(&counts, &expected)
}

/// Goodness of fit of the joint `(x_s, x_c)` marginal against the uniform distribution.
pub fn joint_uniformity_check(config: &SpuriousTaskConfig, samples: usize, seed: u64) -> Result<f64> {
    let len = config.spurious_len + config.core_len;
    if len > 16 {
        return Err(Error::param("joint check needs s + c <= 16"));
    }
    let cells = 1usize << len;
    let mut counts = vec![0u64; cells];
    let mut sampler = SpuriousSampler::new(config, rng::stream(seed, &[rng::tag::DATASET]))?;
    let mut x = vec![1i8; config.n()];
    for _ in 0..samples {
        sampler.sample_into(&mut x)?;
        counts[block_index(&x, 0..len)] += 1;
    }
    chi_square_p_value(&counts, &vec![samples as f64 / cells as f64; cells])
}

/// Goodness of fit of full sampled inputs against [`exact_pmf`].
pub fn sampler_pmf_check(config: &SpuriousTaskConfig, samples: usize, seed: u64) -> Result<f64> {
    let n = config.n();
    if n > 16 {
        return Err(Error::param("sampler check needs n <= 16"));
    }
    let cells = 1usize << n;
    let mut counts = vec![0u64; cells];
    let mut sampler = SpuriousSampler::new(config, rng::stream(seed, &[rng::tag::DATASET]))?;
    let mut x = vec![1i8; n];
    for _ in 0..samples {
        sampler.sample_into(&mut x)?;
        counts[block_index(&x, 0..n)] += 1;
    }
    let expected = (0..cells)
        .map(|i| Ok(samples as f64 * exact_pmf(config, &BitVector::from_index(i as u64, n))?))
        .collect::<Result<Vec<f64>>>()?;
    chi_square_p_value(&counts, &expected)
}

/// A finite i.i.d. sample of `D_λ`, reproducible from `(config, size, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDataset {
    pub config: SpuriousTaskConfig,
    pub seed: u64,
    pub samples: Vec<LabeledSample>,
}

pub fn make_finite_dataset(config: &SpuriousTaskConfig, size: usize, seed: u64) -> Result<FiniteDataset> {
    if size == 0 {
        return Err(Error::param("dataset size must be positive"));
    }
    let mut sampler = SpuriousSampler::new(config, rng::stream(seed, &[rng::tag::DATASET]))?;
    let samples = (0..size).map(|_| sampler.sample()).collect::<Result<Vec<_>>>()?;
    Ok(FiniteDataset {
        config: config.clone(),
        seed,
        samples,
    })
}

impl FiniteDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of minority-group samples, ascending.
    pub fn minority_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.group == Group::Minority)
            .map(|(i, _)| i)
            .collect()
    }

    /// One line per sample: `+`/`-` bits, tab, label (`+1`/`-1`), tab, group.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.samples {
            writeln!(out, "{}\t{}\t{}", s.x, if s.y > 0 { "+1" } else { "-1" }, s.group)?;
        }
        Ok(())
    }

    /// Parse the [`FiniteDataset::write_tsv`] format; labels and groups are
    /// checked against `config`.
    pub fn read_tsv<R: BufRead>(config: &SpuriousTaskConfig, seed: u64, input: R) -> Result<Self> {
        let core = config.core_feature();
        let spur = config.spurious_feature();
        let mut samples = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if line.is_empty() {
                continue;
            }
            let ctx = |m: String| Error::Parse(format!("line {}: {m}", lineno + 1));
            let mut fields = line.split('\t');
            let (Some(bits), Some(label), Some(group), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(ctx("expected three tab-separated fields".into()));
            };
            let x: BitVector = bits.parse().map_err(|e: Error| ctx(e.to_string()))?;
            if x.len() != config.n() {
                return Err(ctx(format!("expected {} bits, got {}", config.n(), x.len())));
            }
            let y: i8 = match label {
                "+1" | "1" => 1,
                "-1" => -1,
                other => return Err(ctx(format!("invalid label {other:?}"))),
            };
            let group: Group = group.parse().map_err(|e: Error| ctx(e.to_string()))?;
            if core.eval_unchecked(x.as_slice()) != y {
                return Err(ctx("label disagrees with the core feature".into()));
            }
            let expected_group = match spur {
                Some(s) if s.eval_unchecked(x.as_slice()) != y => Group::Minority,
                _ => Group::Majority,
            };
            if expected_group != group {
                return Err(ctx("group tag disagrees with the features".into()));
            }
            samples.push(LabeledSample { x, y, group });
        }
        if samples.is_empty() {
            return Err(Error::Parse("dataset file contains no samples".into()));
        }
        Ok(FiniteDataset {
            config: config.clone(),
            seed,
            samples,
        })
    }
}
