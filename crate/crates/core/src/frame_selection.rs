//! Per-stream frame index plans.
//!
//! A [`FrameSelectionPlan`] assigns each of `J` decode streams its own ascending
//! set of `k` frame indices drawn from a `T`-frame video. Three strategies are
//! provided:
//!
//! - [`uniform_offset_plan`]: uniform stride `T/k` per stream, stream `j`
//!   shifted by `j·T/(k·J)`. With `J = 1` this is plain uniform subsampling.
//! - [`dense_chunk_plan`]: the video is cut into `J` contiguous chunks and each
//!   stream samples uniformly inside its chunk.
//! - [`bolt_plan`]: frames drawn without replacement from power-sharpened
//!   relevance scores, round-robin across streams.
//!
//! Plans serialize to a small line-based text format (see [`FrameSelectionPlan::to_text`]).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sharpening exponent for relevance scores.
pub const DEFAULT_SHARPEN_EXPONENT: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("infeasible plan: T={total_frames}, k={frames_per_stream}, J={streams} needs J*k <= T")]
    Infeasible {
        total_frames: usize,
        frames_per_stream: usize,
        streams: usize,
    },
    #[error("plan dimensions must be positive: T={total_frames}, k={frames_per_stream}, J={streams}")]
    ZeroDimension {
        total_frames: usize,
        frames_per_stream: usize,
        streams: usize,
    },
    #[error("score vector has {got} entries, expected {expected}")]
    ScoreLength { expected: usize, got: usize },
    #[error("invalid scores: {0}")]
    InvalidScores(String),
    #[error("sharpen exponent must be positive and finite, got {0}")]
    InvalidExponent(f64),
    #[error("plan text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("plan violates invariant: {0}")]
    Violation(PlanViolation),
}

/// J ascending index sets over a T-frame video, one per stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameSelectionPlan {
    total_frames: usize,
    frames_per_stream: usize,
    sets: Vec<Vec<usize>>,
}

impl FrameSelectionPlan {
    /// Builds a plan from explicit sets. Structural invariants (range, ordering,
    /// set size) are checked; disjointness is not required here.
    pub fn new(
        total_frames: usize,
        frames_per_stream: usize,
        sets: Vec<Vec<usize>>,
    ) -> Result<Self, PlanError> {
        check_dims(total_frames, frames_per_stream, sets.len().max(1))?;
        let plan = Self {
            total_frames,
            frames_per_stream,
            sets,
        };
        match validate_plan(&plan, false) {
            Ok(()) => Ok(plan),
            Err(v) => Err(PlanError::Violation(v)),
        }
    }

    /// `J` copies of the same set, the frame layout used by self-consistency.
    pub fn replicated(set: Vec<usize>, total_frames: usize, streams: usize) -> Result<Self, PlanError> {
        let k = set.len();
        Self::new(total_frames, k, vec![set; streams])
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn frames_per_stream(&self) -> usize {
        self.frames_per_stream
    }

    pub fn streams(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn set(&self, stream: usize) -> &[usize] {
        &self.sets[stream]
    }

    /// Text form: header `T k J`, then one line of space-separated indices per stream.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {}\n",
            self.total_frames,
            self.frames_per_stream,
            self.sets.len()
        );
        for set in &self.sets {
            let line: Vec<String> = set.iter().map(|i| i.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PlanError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(PlanError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let nums = parse_numbers(header, hline + 1)?;
        let [t, k, j] = nums[..] else {
            return Err(PlanError::Parse {
                line: hline + 1,
                message: format!("header needs 3 fields `T k J`, got {}", nums.len()),
            });
        };
        let mut sets = Vec::with_capacity(j);
        for (idx, line) in lines {
            sets.push(parse_numbers(line, idx + 1)?);
        }
        if sets.len() != j {
            return Err(PlanError::Parse {
                line: hline + 1,
                message: format!("header declares {j} streams, found {}", sets.len()),
            });
        }
        Self::new(t, k, sets)
    }
}

impl fmt::Display for FrameSelectionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for FrameSelectionPlan {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_text(s)
    }
}

fn parse_numbers(line: &str, lineno: usize) -> Result<Vec<usize>, PlanError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|e| PlanError::Parse {
                line: lineno,
                message: format!("`{tok}`: {e}"),
            })
        })
        .collect()
}

fn check_dims(t: usize, k: usize, j: usize) -> Result<(), PlanError> {
    if t == 0 || k == 0 || j == 0 {
        return Err(PlanError::ZeroDimension {
            total_frames: t,
            frames_per_stream: k,
            streams: j,
        });
    }
    Ok(())
}

fn check_feasible(t: usize, k: usize, j: usize) -> Result<(), PlanError> {
    check_dims(t, k, j)?;
    if j.checked_mul(k).is_none_or(|n| n > t) {
        return Err(PlanError::Infeasible {
            total_frames: t,
            frames_per_stream: k,
            streams: j,
        });
    }
    Ok(())
}

/// Uniform stride per stream with a per-stream phase offset.
///
/// `index(j, i) = floor(j·T/(k·J) + i·T/k)`, evaluated in exact integer
/// arithmetic as `floor((j + i·J)·T / (k·J))`.
pub fn uniform_offset_plan(t: usize, k: usize, j: usize) -> Result<FrameSelectionPlan, PlanError> {
    check_feasible(t, k, j)?;
    let denom = k * j;
    let sets = (0..j)
        .map(|stream| {
            (0..k)
                .map(|slot| (stream + slot * j) * t / denom)
                .collect()
        })
        .collect();
    Ok(FrameSelectionPlan {
        total_frames: t,
        frames_per_stream: k,
        sets,
    })
}

/// `J` contiguous chunks, uniform sampling inside each chunk.
pub fn dense_chunk_plan(t: usize, k: usize, j: usize) -> Result<FrameSelectionPlan, PlanError> {
    check_feasible(t, k, j)?;
    let sets = (0..j)
        .map(|stream| {
            let start = stream * t / j;
            let end = (stream + 1) * t / j;
            let len = end - start;
            (0..k).map(|slot| start + slot * len / k).collect()
        })
        .collect();
    Ok(FrameSelectionPlan {
        total_frames: t,
        frames_per_stream: k,
        sets,
    })
}

/// Relevance scores plus the sharpening exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltConfig {
    pub sharpen_exponent: f64,
    pub scores: Vec<f64>,
}

impl BoltConfig {
    pub fn new(scores: Vec<f64>) -> Self {
        Self {
            sharpen_exponent: DEFAULT_SHARPEN_EXPONENT,
            scores,
        }
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.sharpen_exponent = exponent;
        self
    }

    fn validate(&self) -> Result<(), PlanError> {
        if !(self.sharpen_exponent.is_finite() && self.sharpen_exponent > 0.0) {
            return Err(PlanError::InvalidExponent(self.sharpen_exponent));
        }
        if self.scores.is_empty() {
            return Err(PlanError::InvalidScores("empty score vector".into()));
        }
        if let Some((i, s)) = self
            .scores
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || **s < 0.0)
        {
            return Err(PlanError::InvalidScores(format!(
                "score {i} is {s}; scores must be finite and non-negative"
            )));
        }
        Ok(())
    }
}

/// Min-max normalizes the scores, raises them to the sharpening exponent and
/// renormalizes to a probability vector. A constant score vector maps to the
/// uniform distribution.
pub fn sharpen_scores(cfg: &BoltConfig) -> Result<Vec<f64>, PlanError> {
    cfg.validate()?;
    let n = cfg.scores.len();
    let (lo, hi) = cfg
        .scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let sharpened: Vec<f64> = cfg
        .scores
        .iter()
        .map(|&s| ((s - lo) / range).powf(cfg.sharpen_exponent))
        .collect();
    // the max element maps to exactly 1, so the total is at least 1
    let total: f64 = sharpened.iter().sum();
    Ok(sharpened.into_iter().map(|w| w / total).collect())
}

/// Score-driven plan: frames are drawn without replacement from the sharpened
/// distribution, renormalized after each removal. Draws go round-robin over
/// streams (stream 0 slot 0, stream 1 slot 0, ...). When the remaining mass is
/// zero the draw is uniform over the remaining frames.
pub fn bolt_plan(
    cfg: &BoltConfig,
    k: usize,
    j: usize,
    seed: u64,
) -> Result<FrameSelectionPlan, PlanError> {
    let t = cfg.scores.len();
    check_feasible(t, k, j)?;
    let mut weights = sharpen_scores(cfg)?;
    let mut taken = vec![false; t];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = vec![Vec::with_capacity(k); j];
    for _slot in 0..k {
        for set in sets.iter_mut() {
            let idx = draw_remaining(&weights, &taken, &mut rng);
            taken[idx] = true;
            weights[idx] = 0.0;
            set.push(idx);
        }
    }
    for set in &mut sets {
        set.sort_unstable();
    }
    Ok(FrameSelectionPlan {
        total_frames: t,
        frames_per_stream: k,
        sets,
    })
}

fn draw_remaining<R: Rng>(weights: &[f64], taken: &[bool], rng: &mut R) -> usize {
    let mass: f64 = weights.iter().sum();
    if mass > 0.0 {
        let target = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut last_positive = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last_positive = Some(i);
            if target < acc {
                return i;
            }
        }
        // rounding left target at the very top of the range
        if let Some(i) = last_positive {
            return i;
        }
    }
    let remaining: Vec<usize> = (0..taken.len()).filter(|&i| !taken[i]).collect();
    remaining[rng.random_range(0..remaining.len())]
}

/// First violated plan invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    NoStreams,
    SetSize {
        stream: usize,
        expected: usize,
        got: usize,
    },
    OutOfRange {
        stream: usize,
        index: usize,
        total_frames: usize,
    },
    NotAscending {
        stream: usize,
        position: usize,
    },
    Overlap {
        index: usize,
        first_stream: usize,
        second_stream: usize,
    },
}

impl PlanViolation {
    /// Short clause name: `no streams`, `set size`, `out of range`, `not ascending`, `overlap`.
    pub fn clause(&self) -> &'static str {
        match self {
            PlanViolation::NoStreams => "no streams",
            PlanViolation::SetSize { .. } => "set size",
            PlanViolation::OutOfRange { .. } => "out of range",
            PlanViolation::NotAscending { .. } => "not ascending",
            PlanViolation::Overlap { .. } => "overlap",
        }
    }
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::NoStreams => write!(f, "no streams: plan has no index sets"),
            PlanViolation::SetSize {
                stream,
                expected,
                got,
            } => write!(f, "set size: stream {stream} has {got} indices, expected {expected}"),
            PlanViolation::OutOfRange {
                stream,
                index,
                total_frames,
            } => write!(
                f,
                "out of range: stream {stream} index {index} not in [0, {total_frames})"
            ),
            PlanViolation::NotAscending { stream, position } => write!(
                f,
                "not ascending: stream {stream} at position {position}"
            ),
            PlanViolation::Overlap {
                index,
                first_stream,
                second_stream,
            } => write!(
                f,
                "overlap: index {index} appears in streams {first_stream} and {second_stream}"
            ),
        }
    }
}

impl std::error::Error for PlanViolation {}

/// Checks the plan invariants, reporting the first violated clause.
pub fn validate_plan(plan: &FrameSelectionPlan, require_disjoint: bool) -> Result<(), PlanViolation> {
    if plan.sets.is_empty() {
        return Err(PlanViolation::NoStreams);
    }
    for (stream, set) in plan.sets.iter().enumerate() {
        if set.len() != plan.frames_per_stream {
            return Err(PlanViolation::SetSize {
                stream,
                expected: plan.frames_per_stream,
                got: set.len(),
            });
        }
        for (position, &index) in set.iter().enumerate() {
            if index >= plan.total_frames {
                return Err(PlanViolation::OutOfRange {
                    stream,
                    index,
                    total_frames: plan.total_frames,
                });
            }
            if position > 0 && set[position - 1] >= index {
                return Err(PlanViolation::NotAscending { stream, position });
            }
        }
    }
    if require_disjoint {
        let mut owner: Vec<Option<usize>> = vec![None; plan.total_frames];
        for (stream, set) in plan.sets.iter().enumerate() {
            for &index in set {
                if let Some(first_stream) = owner[index] {
                    return Err(PlanViolation::Overlap {
                        index,
                        first_stream,
                        second_stream: stream,
                    });
                }
                owner[index] = Some(stream);
            }
        }
    }
    Ok(())
}
