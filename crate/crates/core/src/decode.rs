//! The parallel decode loop.
//!
//! Every step queries the backend once per stream (plus an augmented-view
//! query and a degraded negative query per stream when those are enabled),
//! waits for all of them, fuses the results, draws one token and appends it
//! to every stream. Backend queries within a step may run concurrently; the
//! reduction always happens in ascending stream order, so a decode is
//! reproducible regardless of thread count.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{
    mix, ritual_combine, sample_token, tcd_adjust, AggregationError, Distribution, Space, TcdConfig, TokenId,
    Weights,
};
use crate::backend::{BackendError, ScoreRequest, Scored, Scorer, View, Want};
use crate::frame_selection::FrameSelectionPlan;

/// One stream's conditioning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamContext {
    pub stream_id: usize,
    pub video_ref: String,
    pub frame_set: Vec<usize>,
    pub view: View,
    pub prompt: String,
    pub generated: Vec<TokenId>,
}

impl StreamContext {
    fn request(&self, view: View) -> ScoreRequest {
        ScoreRequest {
            video_ref: self.video_ref.clone(),
            frame_set: self.frame_set.clone(),
            view,
            prompt_text: self.prompt.clone(),
            generated: self.generated.clone(),
            want: Want::Full,
        }
    }
}

/// A video and the prompt every stream receives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub video_ref: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Greedy,
    Temperature(f64),
}

impl Sampling {
    pub fn temperature(self) -> f64 {
        match self {
            Sampling::Greedy => 0.0,
            Sampling::Temperature(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// One weight per stream; the stream count is `weights.len()`.
    pub weights: Weights,
    #[serde(default)]
    pub space: Space,
    #[serde(default)]
    pub sampling: Sampling,
    pub max_tokens: usize,
    #[serde(default)]
    pub stop_tokens: BTreeSet<TokenId>,
    #[serde(default)]
    pub tcd: Option<TcdConfig>,
    /// Augmentation tags; stream `j` uses tag `j mod len`.
    #[serde(default)]
    pub ritual_views: Option<Vec<String>>,
    /// Store only the top-`m` entries of every distribution in the trace.
    #[serde(default)]
    pub trace_top: Option<usize>,
}

impl DecodeConfig {
    /// Uniform weights over `streams`, greedy, no extras.
    pub fn uniform(streams: usize, max_tokens: usize) -> Self {
        Self {
            weights: Weights::uniform(streams),
            space: Space::Probability,
            sampling: Sampling::Greedy,
            max_tokens,
            stop_tokens: BTreeSet::new(),
            tcd: None,
            ritual_views: None,
            trace_top: None,
        }
    }

    pub fn streams(&self) -> usize {
        self.weights.len()
    }

    /// Backend queries issued per stream per step.
    pub fn calls_per_stream(&self) -> usize {
        1 + usize::from(self.tcd.is_some()) + usize::from(self.ritual_views.is_some())
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.weights.is_empty() {
            return Err(DecodeError::Config("at least one stream is required".into()));
        }
        if self.max_tokens == 0 {
            return Err(DecodeError::Config("max_tokens must be at least 1".into()));
        }
        if let Sampling::Temperature(t) = self.sampling {
            if !(t.is_finite() && t >= 0.0) {
                return Err(DecodeError::Config(format!("temperature {t} must be finite and non-negative")));
            }
        }
        if let Some(tcd) = &self.tcd {
            tcd.validate()?;
        }
        if let Some(tags) = &self.ritual_views {
            if tags.is_empty() {
                return Err(DecodeError::Config("ritual_views must name at least one augmentation".into()));
            }
        }
        if self.trace_top == Some(0) {
            return Err(DecodeError::Config("trace_top must be at least 1".into()));
        }
        Ok(())
    }
}

/// The degraded view used as the contrastive negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeView {
    pub view: View,
    /// Single-frame set: nothing could be zeroed.
    pub degenerate: bool,
}

/// Zeroes every other kept frame, by position: slots 1, 3, 5, ...
pub fn negative_view(frame_set: &[usize]) -> NegativeView {
    let zeroed: Vec<usize> = frame_set.iter().skip(1).step_by(2).copied().collect();
    NegativeView {
        degenerate: frame_set.len() < 2,
        view: View::ZeroMask(zeroed),
    }
}

/// A distribution as kept in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoredDist {
    Full(Vec<f64>),
    Top { vocab_size: usize, entries: Vec<(TokenId, f64)> },
}

impl StoredDist {
    fn capture(d: &Distribution, top: Option<usize>) -> Self {
        match top {
            None => StoredDist::Full(d.probs().to_vec()),
            Some(m) => StoredDist::Top {
                vocab_size: d.vocab_size(),
                entries: d.top(m),
            },
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            StoredDist::Full(p) => p.len(),
            StoredDist::Top { vocab_size, .. } => *vocab_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepFlag {
    DegenerateNegativeView,
    TruncatedScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Per-stream distribution after any augmented-view fusion.
    pub streams: Vec<StoredDist>,
    pub aggregated: StoredDist,
    pub token: TokenId,
    pub calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<StepFlag>,
}

/// One record per emitted token.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub records: Vec<StepRecord>,
}

impl DecodeTrace {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.records.iter().map(|r| r.token).collect()
    }

    pub fn calls(&self) -> usize {
        self.records.iter().map(|r| r.calls).sum()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    /// Re-draws every token from the stored aggregated distributions with the
    /// decode's seed and sampling rule. Needs full (untruncated) records.
    pub fn replay_tokens(&self, sampling: Sampling, seed: u64) -> Result<Vec<TokenId>, DecodeError> {
        self.records
            .iter()
            .map(|r| match &r.aggregated {
                StoredDist::Full(p) => {
                    let d = Distribution::from_probs(p.clone())?;
                    let mut rng = step_rng(seed, r.step);
                    Ok(sample_token(&d, sampling.temperature(), &mut rng)?)
                }
                StoredDist::Top { .. } => Err(DecodeError::Config(format!(
                    "step {} was stored truncated and cannot be replayed",
                    r.step
                ))),
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("stream {stream}: {source}")]
    Backend {
        stream: usize,
        #[source]
        source: BackendError,
    },
    #[error("streams disagree: {0}")]
    InconsistentStreams(String),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// A failed decode with everything emitted before the failure.
#[derive(Debug)]
pub struct DecodeFailure {
    pub error: DecodeError,
    pub trace: DecodeTrace,
}

impl fmt::Display for DecodeFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} tokens)", self.error, self.trace.records.len())
    }
}

impl std::error::Error for DecodeFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

#[derive(Clone, Copy)]
enum Role {
    Positive,
    Augmented,
    Negative,
}

/// One synchronous step: query, fuse, draw, broadcast. Streams are left
/// untouched when any query fails.
pub fn step<S: Scorer + ?Sized>(
    streams: &mut [StreamContext],
    backend: &S,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<(TokenId, StepRecord), DecodeError> {
    let first = streams
        .first()
        .ok_or_else(|| DecodeError::Config("no streams".into()))?;
    if streams.len() != cfg.streams() {
        return Err(DecodeError::Config(format!(
            "{} streams but {} weights",
            streams.len(),
            cfg.streams()
        )));
    }
    if let Some(s) = streams.iter().find(|s| s.generated != first.generated) {
        return Err(DecodeError::InconsistentStreams(format!(
            "stream {} generated prefix differs from stream {}",
            s.stream_id, first.stream_id
        )));
    }
    let step_index = first.generated.len();

    let mut flags = BTreeSet::new();
    let mut jobs: Vec<(usize, Role, ScoreRequest)> = Vec::with_capacity(streams.len() * cfg.calls_per_stream());
    for (j, s) in streams.iter().enumerate() {
        jobs.push((j, Role::Positive, s.request(s.view.clone())));
        if let Some(tags) = &cfg.ritual_views {
            let tag = tags[j % tags.len()].clone();
            jobs.push((j, Role::Augmented, s.request(View::Augment(tag))));
        }
        if cfg.tcd.is_some() {
            let neg = negative_view(&s.frame_set);
            if neg.degenerate {
                flags.insert(StepFlag::DegenerateNegativeView);
            }
            jobs.push((j, Role::Negative, s.request(neg.view)));
        }
    }

    // order-preserving parallel fan-out
    let results: Vec<Result<Scored, BackendError>> = jobs.par_iter().map(|(_, _, req)| backend.score(req)).collect();

    let mut positive: Vec<Option<Distribution>> = vec![None; streams.len()];
    let mut augmented: Vec<Option<Distribution>> = vec![None; streams.len()];
    let mut negative: Vec<Option<Distribution>> = vec![None; streams.len()];
    for ((j, role, _), res) in jobs.iter().zip(results) {
        let scored = res.map_err(|source| DecodeError::Backend {
            stream: streams[*j].stream_id,
            source,
        })?;
        if scored.truncated {
            flags.insert(StepFlag::TruncatedScores);
        }
        let slot = match role {
            Role::Positive => &mut positive[*j],
            Role::Augmented => &mut augmented[*j],
            Role::Negative => &mut negative[*j],
        };
        *slot = Some(scored.distribution);
    }

    let per_stream: Vec<Distribution> = positive
        .into_iter()
        .zip(augmented)
        .map(|(p, a)| {
            let p = p.expect("every stream has a positive query");
            match a {
                Some(a) => ritual_combine(&p, &a, cfg.space),
                None => Ok(p),
            }
        })
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Distribution> = per_stream.iter().collect();
    let mut aggregated = mix(&refs, &cfg.weights, cfg.space)?;
    if let Some(tcd) = &cfg.tcd {
        let negs: Vec<Distribution> = negative.into_iter().map(|n| n.expect("negative queried")).collect();
        let neg_refs: Vec<&Distribution> = negs.iter().collect();
        let neg_agg = mix(&neg_refs, &cfg.weights, cfg.space)?;
        aggregated = tcd_adjust(&aggregated, &neg_agg, tcd)?;
    }

    let mut rng = step_rng(seed, step_index);
    let token = sample_token(&aggregated, cfg.sampling.temperature(), &mut rng)?;
    for s in streams.iter_mut() {
        s.generated.push(token);
    }
    let record = StepRecord {
        step: step_index,
        streams: per_stream.iter().map(|d| StoredDist::capture(d, cfg.trace_top)).collect(),
        aggregated: StoredDist::capture(&aggregated, cfg.trace_top),
        token,
        calls: jobs.len(),
        flags: flags.into_iter().collect(),
    };
    Ok((token, record))
}

/// Initial stream contexts: one per plan set, identity view, empty prefix.
pub fn stream_contexts(episode: &Episode, plan: &FrameSelectionPlan) -> Vec<StreamContext> {
    plan.sets()
        .iter()
        .enumerate()
        .map(|(j, set)| StreamContext {
            stream_id: j,
            video_ref: episode.video_ref.clone(),
            frame_set: set.clone(),
            view: View::Identity,
            prompt: episode.prompt.clone(),
            generated: Vec::new(),
        })
        .collect()
}

/// Steps until a stop token (which is kept in the output) or `max_tokens`.
pub fn decode<S: Scorer + ?Sized>(
    episode: &Episode,
    plan: &FrameSelectionPlan,
    backend: &S,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<Decoded, DecodeFailure> {
    let fail = |error, trace| DecodeFailure { error, trace };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, DecodeTrace::default()));
    }
    if plan.streams() != cfg.streams() {
        return Err(fail(
            DecodeError::Config(format!(
                "plan has {} streams, config has {}",
                plan.streams(),
                cfg.streams()
            )),
            DecodeTrace::default(),
        ));
    }
    let mut streams = stream_contexts(episode, plan);
    let mut trace = DecodeTrace::default();
    while trace.records.len() < cfg.max_tokens {
        match step(&mut streams, backend, cfg, seed) {
            Ok((token, record)) => {
                trace.records.push(record);
                if cfg.stop_tokens.contains(&token) {
                    break;
                }
            }
            Err(e) => return Err(fail(e, trace)),
        }
    }
    Ok(Decoded {
        tokens: trace.tokens(),
        trace,
    })
}
