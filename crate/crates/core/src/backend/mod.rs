//! Scorers that turn one stream's conditioning into a next-token distribution.
//!
//! The decode engine talks to every backend through [`Scorer`]. Three
//! implementations ship with the crate:
//!
//! - [`mock::MockScorer`]: a fixture table keyed by (frame set, view, generated prefix).
//! - [`toy::ToyScorer`]: an exact Bayesian label-emission world that stands in
//!   for a video model at desk scale.
//! - [`wire::WireScorer`]: a JSON-over-HTTP client for `/v1/score`, with
//!   [`stub::StubServer`] as the bundled reference server.

pub mod mock;
pub mod stub;
pub mod toy;
pub mod wire;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggregationError, Distribution, TokenId};

/// How a stream sees its frames.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    #[default]
    Identity,
    /// Label-preserving augmentation applied to every kept frame.
    Augment(String),
    /// Frame indices (from the stream's own set) that are blanked out.
    ZeroMask(Vec<usize>),
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            View::Identity => f.write_str("identity"),
            View::Augment(tag) => write!(f, "augment:{tag}"),
            View::ZeroMask(slots) => write!(f, "zero_mask:{slots:?}"),
        }
    }
}

/// Whether the full distribution or only the top entries are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Want {
    #[default]
    Full,
    Top(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub video_ref: String,
    pub frame_set: Vec<usize>,
    pub view: View,
    pub prompt_text: String,
    pub generated: Vec<TokenId>,
    #[serde(default)]
    pub want: Want,
}

/// Wire response body. Exactly one of `scores` (full log-score vector) or
/// `top` (descending `(token, log-probability)` pairs plus `remainder`) is set.
/// A `null` score is a token with zero probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "log_scores")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<Vec<(TokenId, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remainder: Option<f64>,
}

// JSON has no infinities: -inf travels as null
mod log_scores {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|xs| {
                xs.iter()
                    .map(|&x| (x != f64::NEG_INFINITY).then_some(x))
                    .collect::<Vec<_>>()
            })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw: Option<Vec<Option<f64>>> = Option::deserialize(d)?;
        Ok(raw.map(|xs| xs.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect()))
    }
}

/// Slack allowed between the reported remainder and `1 - sum(exp(top))`.
pub const REMAINDER_TOLERANCE: f64 = 1e-6;

impl ScoreResponse {
    /// Full response carrying log-probabilities of `d`.
    pub fn full(d: &Distribution) -> Self {
        let scores = match d.raw_scores() {
            Some(raw) => raw.to_vec(),
            None => d.probs().iter().map(|p| p.ln()).collect(),
        };
        Self {
            vocab_size: d.vocab_size(),
            scores: Some(scores),
            top: None,
            remainder: None,
        }
    }

    /// Top-`m` response built from `d`.
    pub fn top_of(d: &Distribution, m: usize) -> Self {
        let top: Vec<(TokenId, f64)> = d
            .top(m)
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(t, p)| (t, p.ln()))
            .collect();
        let kept: f64 = top.iter().map(|(_, lp)| lp.exp()).sum();
        Self {
            vocab_size: d.vocab_size(),
            scores: None,
            top: Some(top),
            remainder: Some((1.0 - kept).max(0.0)),
        }
    }

    /// Converts the response to a distribution. Top-`m` responses are
    /// exponentiated, zero-filled and renormalized over the reported tokens;
    /// the returned flag is `true` in that case.
    pub fn into_scored(self) -> Result<Scored, BackendError> {
        match (self.scores, self.top) {
            (Some(scores), None) => {
                if scores.len() != self.vocab_size {
                    return Err(BackendError::Invalid(format!(
                        "scores has {} entries, vocab_size is {}",
                        scores.len(),
                        self.vocab_size
                    )));
                }
                if let Some(s) = scores.iter().find(|s| s.is_nan() || **s == f64::INFINITY) {
                    return Err(BackendError::Invalid(format!("non-finite score {s}")));
                }
                if scores.iter().all(|s| *s == f64::NEG_INFINITY) {
                    return Err(BackendError::Invalid("every token has zero probability".into()));
                }
                Ok(Scored {
                    distribution: Distribution::from_logits(scores)?,
                    truncated: false,
                })
            }
            (None, Some(top)) => {
                let mut masses = vec![0.0; self.vocab_size];
                let mut prev = f64::INFINITY;
                let mut total = 0.0;
                for &(token, lp) in &top {
                    let slot = masses.get_mut(token as usize).ok_or_else(|| {
                        BackendError::Invalid(format!(
                            "token {token} outside vocabulary of {}",
                            self.vocab_size
                        ))
                    })?;
                    if !(lp.is_finite() && lp <= 0.0) {
                        return Err(BackendError::Invalid(format!(
                            "log-probability {lp} for token {token}"
                        )));
                    }
                    if lp > prev {
                        return Err(BackendError::Invalid("top entries not sorted descending".into()));
                    }
                    if *slot > 0.0 {
                        return Err(BackendError::Invalid(format!("token {token} repeated")));
                    }
                    prev = lp;
                    *slot = lp.exp();
                    total += *slot;
                }
                if top.is_empty() {
                    return Err(BackendError::Invalid("empty top list".into()));
                }
                let implied = 1.0 - total;
                if implied < -REMAINDER_TOLERANCE {
                    return Err(BackendError::Invalid(format!(
                        "top entries carry mass {total} > 1"
                    )));
                }
                if let Some(r) = self.remainder {
                    if r < 0.0 || (r - implied).abs() > REMAINDER_TOLERANCE {
                        return Err(BackendError::Invalid(format!(
                            "remainder {r} disagrees with 1 - sum(top) = {implied}"
                        )));
                    }
                }
                Ok(Scored {
                    distribution: Distribution::from_masses(masses)?.with_log_raw_scores(),
                    truncated: true,
                })
            }
            (Some(_), Some(_)) => Err(BackendError::Invalid(
                "response carries both scores and top".into(),
            )),
            (None, None) => Err(BackendError::Invalid(
                "response carries neither scores nor top".into(),
            )),
        }
    }
}

/// A backend's answer for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub distribution: Distribution,
    /// The backend only reported its top tokens and the rest was zero-filled.
    pub truncated: bool,
}

impl From<Distribution> for Scored {
    fn from(distribution: Distribution) -> Self {
        Self {
            distribution,
            truncated: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("fixture miss: no entry for {key}")]
    FixtureMiss { key: String },
    #[error("unknown video `{0}`")]
    UnknownVideo(String),
    #[error("inconsistent world: {0}")]
    InconsistentWorld(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response body: {0}")]
    Parse(String),
    #[error("invalid response: {0}")]
    Invalid(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Distribution(#[from] AggregationError),
}

/// Anything that scores a stream's next token.
pub trait Scorer: Send + Sync {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError>;

    /// Renders generated tokens as text for answer extraction.
    fn detokenize(&self, tokens: &[TokenId]) -> String {
        let parts: Vec<String> = tokens.iter().map(|t| format!("<{t}>")).collect();
        parts.join(" ")
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError> {
        (**self).score(req)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        (**self).detokenize(tokens)
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError> {
        (**self).score(req)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        (**self).detokenize(tokens)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError> {
        (**self).score(req)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        (**self).detokenize(tokens)
    }
}

/// Wraps a scorer and counts calls, for compute-matched audits.
#[derive(Debug)]
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) -> usize {
        self.calls.swap(0, Ordering::SeqCst)
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for CountingScorer<S> {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(req)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        self.inner.detokenize(tokens)
    }
}
