//! Fusing per-stream next-token distributions.
//!
//! Streams are combined either as a weighted probability mixture
//! ([`mix_probs`]) or by averaging pre-normalization scores and re-normalizing
//! ([`mix_logits`], a normalized weighted geometric mean of the probabilities).
//! [`tcd_adjust`] applies temporal contrastive decoding against a degraded
//! negative stream and [`ritual_combine`] fuses an original and an augmented
//! view with equal weight.
//!
//! All reductions run in ascending stream order so results are bit-reproducible.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

/// Tolerance on the total mass of a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;
/// Tolerance on the total of a weight vector.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no distributions to aggregate")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("stream {stream} carries no raw scores, required for logit aggregation")]
    MissingRawScores { stream: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid contrastive config: {0}")]
    InvalidTcd(String),
    #[error("temperature must be finite and non-negative, got {0}")]
    InvalidTemperature(f64),
}

/// Probability vector over the vocabulary, optionally with the raw scores it
/// was normalized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_scores: Option<Vec<f64>>,
}

impl Distribution {
    /// Wraps an already-normalized probability vector.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, AggregationError> {
        check_probs(&probs)?;
        Ok(Self {
            probs,
            raw_scores: None,
        })
    }

    /// Normalizes non-negative masses to sum to one.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self, AggregationError> {
        if masses.is_empty() {
            return Err(AggregationError::InvalidDistribution("empty vector".into()));
        }
        if let Some(m) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(AggregationError::InvalidDistribution(format!(
                "mass {m} is negative or not finite"
            )));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(AggregationError::InvalidDistribution("zero total mass".into()));
        }
        Ok(Self {
            probs: masses.into_iter().map(|m| m / total).collect(),
            raw_scores: None,
        })
    }

    /// Exponential normalization of raw scores. `-inf` entries map to zero
    /// probability; at least one entry must be finite.
    pub fn from_logits(logits: Vec<f64>) -> Result<Self, AggregationError> {
        let probs = softmax(&logits)?;
        Ok(Self {
            probs,
            raw_scores: Some(logits),
        })
    }

    /// One-hot distribution on `token`.
    pub fn one_hot(vocab_size: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; vocab_size];
        probs[token as usize] = 1.0;
        Self {
            probs,
            raw_scores: None,
        }
    }

    /// Attaches `ln p` as the raw scores so the distribution can take part in
    /// logit aggregation.
    pub fn with_log_raw_scores(mut self) -> Self {
        self.raw_scores = Some(self.probs.iter().map(|p| p.ln()).collect());
        self
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn raw_scores(&self) -> Option<&[f64]> {
        self.raw_scores.as_deref()
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// The `m` most probable tokens, descending, ties by lowest id.
    pub fn top(&self, m: usize) -> Vec<(TokenId, f64)> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.into_iter()
            .take(m)
            .map(|i| (i as TokenId, self.probs[i]))
            .collect()
    }
}

fn check_probs(probs: &[f64]) -> Result<(), AggregationError> {
    if probs.is_empty() {
        return Err(AggregationError::InvalidDistribution("empty vector".into()));
    }
    if let Some((i, p)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(AggregationError::InvalidDistribution(format!(
            "entry {i} is {p}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(AggregationError::InvalidDistribution(format!(
            "masses sum to {total}"
        )));
    }
    Ok(())
}

fn softmax(scores: &[f64]) -> Result<Vec<f64>, AggregationError> {
    if scores.is_empty() {
        return Err(AggregationError::InvalidDistribution("empty score vector".into()));
    }
    if let Some(s) = scores
        .iter()
        .find(|s| s.is_nan() || **s == f64::INFINITY)
    {
        return Err(AggregationError::InvalidDistribution(format!(
            "raw score {s} is not allowed"
        )));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(AggregationError::InvalidDistribution(
            "all raw scores are -inf".into(),
        ));
    }
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Stream weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self, AggregationError> {
        if w.is_empty() {
            return Err(AggregationError::InvalidWeights("no weights".into()));
        }
        if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(AggregationError::InvalidWeights(format!(
                "weight {x} is negative or not finite"
            )));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(AggregationError::InvalidWeights(format!(
                "weights sum to {total}"
            )));
        }
        Ok(Self(w))
    }

    /// Equal weights `1/J`.
    pub fn uniform(streams: usize) -> Self {
        assert!(streams > 0, "uniform weights need at least one stream");
        Self(vec![1.0 / streams as f64; streams])
    }

    /// Rescales non-negative weights onto the simplex.
    pub fn from_unnormalized(w: Vec<f64>) -> Result<Self, AggregationError> {
        let total: f64 = w.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(AggregationError::InvalidWeights(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Self::new(w.into_iter().map(|x| x / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = AggregationError;

    fn try_from(w: Vec<f64>) -> Result<Self, Self::Error> {
        Weights::new(w)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

/// Whether streams are fused as probabilities or as raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    #[default]
    Probability,
    Logit,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Probability => "probability",
            Space::Logit => "logit",
        })
    }
}

impl FromStr for Space {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probability" | "prob" => Ok(Space::Probability),
            "logit" => Ok(Space::Logit),
            other => Err(format!("unknown aggregation space `{other}`")),
        }
    }
}

fn check_shapes(dists: &[&Distribution], w: &Weights) -> Result<usize, AggregationError> {
    let first = dists.first().ok_or(AggregationError::Empty)?;
    if dists.len() != w.len() {
        return Err(AggregationError::Dimension(format!(
            "{} distributions but {} weights",
            dists.len(),
            w.len()
        )));
    }
    let vocab = first.vocab_size();
    if let Some((j, d)) = dists
        .iter()
        .enumerate()
        .find(|(_, d)| d.vocab_size() != vocab)
    {
        return Err(AggregationError::Dimension(format!(
            "stream {j} has vocabulary {} but stream 0 has {vocab}",
            d.vocab_size()
        )));
    }
    Ok(vocab)
}

fn all_identical(dists: &[&Distribution]) -> bool {
    dists.windows(2).all(|w| w[0] == w[1])
}

/// Weighted probability mixture `sum_j w_j p_j`.
pub fn mix_probs(dists: &[&Distribution], w: &Weights) -> Result<Distribution, AggregationError> {
    let vocab = check_shapes(dists, w)?;
    // a mixture of identical distributions is that distribution
    if all_identical(dists) {
        return Ok(dists[0].clone());
    }
    let mut out = vec![0.0; vocab];
    for (d, &wj) in dists.iter().zip(w.as_slice()) {
        if wj == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(&d.probs) {
            *o += wj * p;
        }
    }
    Ok(Distribution {
        probs: out,
        raw_scores: None,
    })
}

/// Weighted mean of raw scores followed by exponential normalization.
pub fn mix_logits(dists: &[&Distribution], w: &Weights) -> Result<Distribution, AggregationError> {
    let vocab = check_shapes(dists, w)?;
    for (stream, d) in dists.iter().enumerate() {
        if d.raw_scores.is_none() {
            return Err(AggregationError::MissingRawScores { stream });
        }
    }
    if all_identical(dists) {
        return Ok(dists[0].clone());
    }
    let mut mean = vec![0.0; vocab];
    for (d, &wj) in dists.iter().zip(w.as_slice()) {
        // zero-weight streams would turn -inf scores into NaN
        if wj == 0.0 {
            continue;
        }
        let raw = d.raw_scores.as_ref().expect("checked above");
        for (m, z) in mean.iter_mut().zip(raw) {
            *m += wj * z;
        }
    }
    Distribution::from_logits(mean)
}

/// Dispatches to [`mix_probs`] or [`mix_logits`].
pub fn mix(dists: &[&Distribution], w: &Weights, space: Space) -> Result<Distribution, AggregationError> {
    match space {
        Space::Probability => mix_probs(dists, w),
        Space::Logit => mix_logits(dists, w),
    }
}

/// Space in which the contrastive score is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcdSpace {
    #[default]
    Probability,
    Log,
}

/// Temporal contrastive decoding settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcdConfig {
    /// Contrast strength in `[0, 1)`.
    pub contrast_strength: f64,
    /// Plausibility threshold in `[0, 1]`, relative to the top positive probability.
    pub plausibility_threshold: f64,
    #[serde(default)]
    pub space: TcdSpace,
}

impl Default for TcdConfig {
    fn default() -> Self {
        Self {
            contrast_strength: 0.5,
            plausibility_threshold: 0.1,
            space: TcdSpace::Probability,
        }
    }
}

impl TcdConfig {
    pub fn validate(&self) -> Result<(), AggregationError> {
        if !(0.0..1.0).contains(&self.contrast_strength) {
            return Err(AggregationError::InvalidTcd(format!(
                "contrast strength {} outside [0, 1)",
                self.contrast_strength
            )));
        }
        if !(0.0..=1.0).contains(&self.plausibility_threshold) {
            return Err(AggregationError::InvalidTcd(format!(
                "plausibility threshold {} outside [0, 1]",
                self.plausibility_threshold
            )));
        }
        Ok(())
    }
}

/// Tokens whose positive probability reaches `threshold * max(pos)`.
pub fn plausible_set(pos: &Distribution, threshold: f64) -> Vec<bool> {
    let max = pos.probs.iter().copied().fold(0.0, f64::max);
    let cut = threshold * max;
    pos.probs.iter().map(|&p| p >= cut).collect()
}

/// Contrasts `pos` against the degraded-view distribution `neg`.
///
/// Probability space: `(1+a)·pos − a·neg` on the plausible set, negatives
/// clamped to zero. Log space: `(1+a)·ln pos − a·ln neg` on the plausible set,
/// exponentially normalized. Tokens outside the plausible set get zero mass.
pub fn tcd_adjust(
    pos: &Distribution,
    neg: &Distribution,
    cfg: &TcdConfig,
) -> Result<Distribution, AggregationError> {
    cfg.validate()?;
    if pos.vocab_size() != neg.vocab_size() {
        return Err(AggregationError::Dimension(format!(
            "positive vocabulary {} vs negative {}",
            pos.vocab_size(),
            neg.vocab_size()
        )));
    }
    let a = cfg.contrast_strength;
    let plausible = plausible_set(pos, cfg.plausibility_threshold);
    if a == 0.0 && pos.probs.iter().zip(&plausible).all(|(&p, &keep)| keep || p == 0.0) {
        // no contrast and nothing cut: the positive distribution itself
        return Ok(pos.clone());
    }
    match cfg.space {
        TcdSpace::Probability => {
            let mut truncated = false;
            let scores: Vec<f64> = pos
                .probs
                .iter()
                .zip(&neg.probs)
                .zip(&plausible)
                .map(|((&p, &n), &keep)| {
                    if !keep {
                        truncated |= p > 0.0 || n > 0.0;
                        return 0.0;
                    }
                    let s = (1.0 + a) * p - a * n;
                    if s < 0.0 {
                        truncated = true;
                        0.0
                    } else {
                        s
                    }
                })
                .collect();
            let total: f64 = scores.iter().sum();
            if total <= 0.0 {
                // every plausible score clamped: keep the positive stream on the plausible set
                let masses = pos
                    .probs
                    .iter()
                    .zip(&plausible)
                    .map(|(&p, &keep)| if keep { p } else { 0.0 })
                    .collect();
                return Distribution::from_masses(masses);
            }
            if !truncated {
                // nothing removed: (1+a)·1 − a·1 already sums to one
                return Ok(Distribution {
                    probs: scores,
                    raw_scores: None,
                });
            }
            Ok(Distribution {
                probs: scores.into_iter().map(|s| s / total).collect(),
                raw_scores: None,
            })
        }
        TcdSpace::Log => {
            let scores: Vec<f64> = pos
                .probs
                .iter()
                .zip(&neg.probs)
                .zip(&plausible)
                .map(|((&p, &n), &keep)| {
                    if !keep || p == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        (1.0 + a) * p.ln() - a * n.max(f64::MIN_POSITIVE).ln()
                    }
                })
                .collect();
            Distribution::from_logits(scores)
        }
    }
}

/// Equal-weight fusion of an original and an augmented view.
pub fn ritual_combine(
    original: &Distribution,
    augmented: &Distribution,
    space: Space,
) -> Result<Distribution, AggregationError> {
    mix(&[original, augmented], &Weights::uniform(2), space)
}

/// Most probable token; ties go to the lowest id.
pub fn argmax_token(d: &Distribution) -> TokenId {
    let mut best = 0;
    for (i, &p) in d.probs.iter().enumerate().skip(1) {
        if p > d.probs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Draws a token from the temperature-scaled distribution `p^(1/t)`.
/// Temperature zero is greedy decoding.
pub fn sample_token<R: Rng + ?Sized>(
    d: &Distribution,
    temperature: f64,
    rng: &mut R,
) -> Result<TokenId, AggregationError> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(AggregationError::InvalidTemperature(temperature));
    }
    if temperature == 0.0 {
        return Ok(argmax_token(d));
    }
    let scaled: Vec<f64> = if temperature == 1.0 {
        d.probs.clone()
    } else {
        let logs: Vec<f64> = d.probs.iter().map(|p| p.ln() / temperature).collect();
        softmax(&logs)?
    };
    let total: f64 = scaled.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in scaled.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if target < acc {
            return Ok(i as TokenId);
        }
    }
    Ok(last.map_or_else(|| argmax_token(d), |i| i as TokenId))
}

/// [`sample_token`] with a fresh generator seeded from `seed`.
pub fn sample_token_seeded(
    d: &Distribution,
    temperature: f64,
    seed: u64,
) -> Result<TokenId, AggregationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_token(d, temperature, &mut rng)
}
