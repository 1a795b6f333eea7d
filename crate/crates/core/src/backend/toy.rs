//! Exact label-emission world standing in for a video model.
//!
//! A hidden label `z` is drawn from a prior; each of the `T` frames is a
//! symbol drawn independently from the emission row of `z`. A stream that sees
//! a subset of frames answers with the exact Bayes posterior over labels, so
//! "more streams see more frames" becomes measurable without a real model.
//!
//! Vocabulary: token `i < labels` is the option letter of label `i`; token
//! `labels` is end-of-sequence. Video references have the form `toy:<T>:<seed>`
//! and are regenerated on demand from the seed.

use rand::distr::{Distribution as _, weighted::WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ScoreRequest, Scored, Scorer, View};
use crate::aggregation::{Distribution, TokenId};
use crate::eval::{EvalItem, Task};

/// Tolerance on prior and emission row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Option letters; the world supports between 2 and 4 labels.
pub const OPTION_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorld {
    prior: Vec<f64>,
    /// `emission[z][s] = P(frame symbol s | label z)`.
    emission: Vec<Vec<f64>>,
}

fn check_simplex(row: &[f64], what: &str) -> Result<(), BackendError> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(BackendError::InconsistentWorld(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(BackendError::InconsistentWorld(format!(
            "{what} sums to {total}"
        )));
    }
    Ok(())
}

impl ToyWorld {
    pub fn new(prior: Vec<f64>, emission: Vec<Vec<f64>>) -> Result<Self, BackendError> {
        if !(2..=OPTION_LETTERS.len()).contains(&prior.len()) {
            return Err(BackendError::InconsistentWorld(format!(
                "{} labels; supported range is 2..=4",
                prior.len()
            )));
        }
        check_simplex(&prior, "prior")?;
        if emission.len() != prior.len() {
            return Err(BackendError::InconsistentWorld(format!(
                "{} emission rows for {} labels",
                emission.len(),
                prior.len()
            )));
        }
        let symbols = emission[0].len();
        for (z, row) in emission.iter().enumerate() {
            if row.len() != symbols || symbols == 0 {
                return Err(BackendError::InconsistentWorld(format!(
                    "emission row {z} has {} symbols, expected {symbols}",
                    row.len()
                )));
            }
            check_simplex(row, &format!("emission row {z}"))?;
        }
        Ok(Self { prior, emission })
    }

    /// Uniform prior, one symbol per label; a frame shows the true label's
    /// symbol with probability `accuracy` and each other symbol uniformly.
    pub fn symmetric(labels: usize, accuracy: f64) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&accuracy) || labels < 2 {
            return Err(BackendError::InconsistentWorld(format!(
                "symmetric world needs >= 2 labels and accuracy in [0, 1], got {labels}, {accuracy}"
            )));
        }
        let off = (1.0 - accuracy) / (labels - 1) as f64;
        let emission = (0..labels)
            .map(|z| (0..labels).map(|s| if s == z { accuracy } else { off }).collect())
            .collect::<Vec<Vec<f64>>>();
        // rows are built to sum to one; re-normalize away rounding
        let emission = emission
            .into_iter()
            .map(|row: Vec<f64>| {
                let t: f64 = row.iter().sum();
                row.into_iter().map(|p| p / t).collect()
            })
            .collect();
        Self::new(vec![1.0 / labels as f64; labels], emission)
    }

    pub fn labels(&self) -> usize {
        self.prior.len()
    }

    pub fn symbols(&self) -> usize {
        self.emission[0].len()
    }

    pub fn vocab_size(&self) -> usize {
        self.labels() + 1
    }

    pub fn eos_token(&self) -> TokenId {
        self.labels() as TokenId
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn emission(&self) -> &[Vec<f64>] {
        &self.emission
    }

    pub fn label_token(&self, label: usize) -> TokenId {
        label as TokenId
    }

    pub fn label_letter(&self, label: usize) -> char {
        OPTION_LETTERS[label]
    }

    /// Posterior over labels given observed `(slot, symbol)` pairs.
    pub fn label_posterior(&self, observed: &[(usize, usize)]) -> Result<Vec<f64>, BackendError> {
        let mut log_post: Vec<f64> = self.prior.iter().map(|p| p.ln()).collect();
        for &(slot, symbol) in observed {
            if symbol >= self.symbols() {
                return Err(BackendError::InconsistentWorld(format!(
                    "slot {slot} shows symbol {symbol}, world has {} symbols",
                    self.symbols()
                )));
            }
            for (lp, row) in log_post.iter_mut().zip(&self.emission) {
                *lp += row[symbol].ln();
            }
        }
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(BackendError::InconsistentWorld(
                "observations have zero likelihood under every label".into(),
            ));
        }
        let w: Vec<f64> = log_post.iter().map(|lp| (lp - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    /// Symbol permutation for an augmentation tag. The emission model is
    /// permuted alongside, so augmentations preserve the label.
    pub fn augmentation(&self, tag: &str) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.symbols()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(tag.as_bytes()));
        perm.shuffle(&mut rng);
        perm
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Bayes posterior over answer tokens (end-of-sequence gets zero mass).
pub fn toy_posterior(world: &ToyWorld, observed: &[(usize, usize)]) -> Result<Distribution, BackendError> {
    let mut probs = world.label_posterior(observed)?;
    probs.push(0.0);
    Ok(Distribution::from_probs(probs)?.with_log_raw_scores())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEpisode {
    pub label: usize,
    pub frames: Vec<usize>,
    pub item: EvalItem,
}

pub fn toy_video_ref(total_frames: usize, seed: u64) -> String {
    format!("toy:{total_frames}:{seed}")
}

fn parse_video_ref(video_ref: &str) -> Option<(usize, u64)> {
    let rest = video_ref.strip_prefix("toy:")?;
    let (t, seed) = rest.split_once(':')?;
    Some((t.parse().ok()?, seed.parse().ok()?))
}

/// Samples the hidden label and `T` frames, deterministic by seed.
pub fn toy_episode(world: &ToyWorld, total_frames: usize, seed: u64) -> Result<ToyEpisode, BackendError> {
    if total_frames == 0 {
        return Err(BackendError::Config("toy episode needs T >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = WeightedIndex::new(&world.prior)
        .map_err(|e| BackendError::InconsistentWorld(e.to_string()))?;
    let label = prior.sample(&mut rng);
    let row = WeightedIndex::new(&world.emission[label])
        .map_err(|e| BackendError::InconsistentWorld(e.to_string()))?;
    let frames: Vec<usize> = (0..total_frames).map(|_| row.sample(&mut rng)).collect();
    let options = (0..world.labels())
        .map(|z| format!("event {}", world.label_letter(z)))
        .collect();
    let item = EvalItem {
        id: format!("toy-{seed}"),
        video_ref: toy_video_ref(total_frames, seed),
        total_frames,
        task: Task::MultipleChoice,
        question: "Which event does the video show?".into(),
        options: Some(options),
        reference: world.label_letter(label).to_string(),
        category: "toy".into(),
    };
    Ok(ToyEpisode {
        label,
        frames,
        item,
    })
}

/// Serves exact posteriors for `toy:<T>:<seed>` videos.
///
/// With an empty generated prefix the answer distribution is the posterior
/// over option letters; once a token has been generated the world emits
/// end-of-sequence with certainty.
#[derive(Debug, Clone)]
pub struct ToyScorer {
    world: ToyWorld,
}

impl ToyScorer {
    pub fn new(world: ToyWorld) -> Self {
        Self { world }
    }

    pub fn world(&self) -> &ToyWorld {
        &self.world
    }

    /// The frames of a toy video, regenerated from its reference.
    pub fn frames(&self, video_ref: &str) -> Result<Vec<usize>, BackendError> {
        let (t, seed) =
            parse_video_ref(video_ref).ok_or_else(|| BackendError::UnknownVideo(video_ref.into()))?;
        Ok(toy_episode(&self.world, t, seed)?.frames)
    }
}

impl Scorer for ToyScorer {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError> {
        let frames = self.frames(&req.video_ref)?;
        if !req.generated.is_empty() {
            return Ok(Distribution::one_hot(self.world.vocab_size(), self.world.eos_token())
                .with_log_raw_scores()
                .into());
        }
        let mut observed = Vec::with_capacity(req.frame_set.len());
        for (slot, &t) in req.frame_set.iter().enumerate() {
            let symbol = *frames.get(t).ok_or_else(|| {
                BackendError::Invalid(format!("frame {t} outside video of {} frames", frames.len()))
            })?;
            observed.push((slot, symbol));
        }
        let observed = match &req.view {
            View::Identity => observed,
            View::ZeroMask(zeroed) => observed
                .into_iter()
                .filter(|(slot, _)| !zeroed.contains(&req.frame_set[*slot]))
                .collect(),
            View::Augment(tag) => {
                // frames arrive permuted; invert with the matching emission permutation
                let perm = self.world.augmentation(tag);
                let mut inverse = vec![0; perm.len()];
                for (s, &p) in perm.iter().enumerate() {
                    inverse[p] = s;
                }
                observed
                    .into_iter()
                    .map(|(slot, s)| (slot, inverse[perm[s]]))
                    .collect()
            }
        };
        Ok(toy_posterior(&self.world, &observed)?.into())
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .filter(|&&t| (t as usize) < self.world.labels())
            .map(|&t| self.world.label_letter(t as usize))
            .collect()
    }
}
