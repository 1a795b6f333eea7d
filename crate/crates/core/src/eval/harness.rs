//! Runs decoding methods over a dataset and scores the outputs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::clients::{judge_score, sts_score, Embedder, Judge};
use super::metrics::rouge_l;
use super::prompt::{build_prompt, extract_answer, majority_vote};
use super::{EvalItem, Method, MethodKind, MethodResult, Task};
use crate::aggregation::{Space, TcdConfig, TokenId, Weights};
use crate::backend::{BackendError, Scorer};
use crate::decode::{decode, DecodeConfig, DecodeError, DecodeTrace, Episode, Sampling};
use crate::frame_selection::{
    bolt_plan, dense_chunk_plan, uniform_offset_plan, BoltConfig, FrameSelectionPlan, PlanError,
};

/// How each stream's frames are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Uniform,
    Dense,
    Bolt,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Dense => "dense",
            Strategy::Bolt => "bolt",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "dense" => Ok(Strategy::Dense),
            "bolt" => Ok(Strategy::Bolt),
            other => Err(format!("unknown strategy `{other}` (uniform, dense, bolt)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub frames_per_stream: usize,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub space: Space,
    /// Used by `+tcd` methods.
    #[serde(default)]
    pub tcd: TcdConfig,
    /// Used by `+ritual` methods; stream `j` takes tag `j mod len`.
    #[serde(default = "default_ritual_views")]
    pub ritual_views: Vec<String>,
    /// Sampling temperature of self-consistency streams.
    #[serde(default = "default_sc_temperature")]
    pub sc_temperature: f64,
    pub max_tokens: usize,
    #[serde(default)]
    pub stop_tokens: BTreeSet<TokenId>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace_top: Option<usize>,
    /// Per-item frame relevance scores for the BOLT strategy, keyed by item id.
    #[serde(default)]
    pub bolt_scores: HashMap<String, Vec<f64>>,
    /// Attach decode traces to results.
    #[serde(default)]
    pub keep_traces: bool,
}

fn default_ritual_views() -> Vec<String> {
    ["hflip", "vflip", "rotate180", "color_jitter", "gaussian_blur"]
        .map(String::from)
        .to_vec()
}

fn default_sc_temperature() -> f64 {
    1.0
}

impl HarnessConfig {
    pub fn new(frames_per_stream: usize, max_tokens: usize) -> Self {
        Self {
            frames_per_stream,
            strategy: Strategy::Uniform,
            space: Space::Probability,
            tcd: TcdConfig::default(),
            ritual_views: default_ritual_views(),
            sc_temperature: default_sc_temperature(),
            max_tokens,
            stop_tokens: BTreeSet::new(),
            seed: 0,
            trace_top: None,
            bolt_scores: HashMap::new(),
            keep_traces: false,
        }
    }
}

/// Optional metric services for description tasks.
#[derive(Clone, Copy, Default)]
pub struct MetricClients<'a> {
    pub judge: Option<&'a dyn Judge>,
    pub embedder: Option<&'a dyn Embedder>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("item `{item}`: {source}")]
    Plan {
        item: String,
        #[source]
        source: PlanError,
    },
    #[error("item `{item}`: {source}")]
    Decode {
        item: String,
        #[source]
        source: DecodeError,
    },
    #[error("self-consistency needs identical frame sets in every stream")]
    NotReplicated,
}

impl HarnessError {
    /// The backend could not be reached or refused the request.
    pub fn is_backend_down(&self) -> bool {
        matches!(
            self,
            HarnessError::Decode {
                source: DecodeError::Backend {
                    source: BackendError::Transport { .. } | BackendError::Status { .. },
                    ..
                },
                ..
            }
        )
    }
}

/// A run stopped by an unreachable backend; `results` holds every item that
/// finished.
#[derive(Debug)]
pub struct RunFailure {
    pub results: Vec<MethodResult>,
    pub error: HarnessError,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} results completed)", self.error, self.results.len())
    }
}

impl std::error::Error for RunFailure {}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-item seed, independent of evaluation order.
pub fn item_seed(seed: u64, item_id: &str) -> u64 {
    let h = item_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    splitmix(seed ^ h)
}

/// The `J`-stream frame plan for an item under the configured strategy.
pub fn plan_for(item: &EvalItem, streams: usize, cfg: &HarnessConfig, seed: u64) -> Result<FrameSelectionPlan, PlanError> {
    let (t, k) = (item.total_frames, cfg.frames_per_stream);
    match cfg.strategy {
        Strategy::Uniform => uniform_offset_plan(t, k, streams),
        Strategy::Dense => dense_chunk_plan(t, k, streams),
        Strategy::Bolt => {
            let scores = cfg.bolt_scores.get(&item.id).cloned().unwrap_or_else(|| vec![1.0; t]);
            bolt_plan(&BoltConfig::new(scores), k, streams, seed)
        }
    }
}

/// Answers of `J` independently sampled decodes over identical frame sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfConsistency {
    pub answer: Option<String>,
    pub votes: Vec<Option<String>>,
    pub outputs: Vec<String>,
    pub calls: usize,
    pub tokens: usize,
    pub traces: Vec<DecodeTrace>,
}

/// Decodes one sampled stream per plan set and majority-votes the extracted
/// answers. Every set must be identical, so the streams differ only in their
/// random draws.
pub fn self_consistency<S: Scorer + ?Sized>(
    item: &EvalItem,
    plan: &FrameSelectionPlan,
    backend: &S,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<SelfConsistency, HarnessError> {
    if plan.sets().windows(2).any(|w| w[0] != w[1]) {
        return Err(HarnessError::NotReplicated);
    }
    let episode = Episode {
        video_ref: item.video_ref.clone(),
        prompt: build_prompt(item),
    };
    let single = FrameSelectionPlan::new(plan.total_frames(), plan.frames_per_stream(), vec![plan.set(0).to_vec()])
        .map_err(|source| HarnessError::Plan {
            item: item.id.clone(),
            source,
        })?;
    let dcfg = DecodeConfig {
        sampling: Sampling::Temperature(cfg.sc_temperature),
        stop_tokens: cfg.stop_tokens.clone(),
        trace_top: cfg.trace_top,
        space: cfg.space,
        ..DecodeConfig::uniform(1, cfg.max_tokens)
    };
    let mut out = SelfConsistency {
        answer: None,
        votes: Vec::with_capacity(plan.streams()),
        outputs: Vec::with_capacity(plan.streams()),
        calls: 0,
        tokens: 0,
        traces: Vec::new(),
    };
    for j in 0..plan.streams() {
        let decoded = decode(&episode, &single, backend, &dcfg, splitmix(seed ^ j as u64)).map_err(|f| {
            HarnessError::Decode {
                item: item.id.clone(),
                source: f.error,
            }
        })?;
        let text = backend.detokenize(&decoded.tokens);
        out.calls += decoded.trace.calls();
        out.tokens += decoded.tokens.len();
        out.votes.push(extract_answer(&text, item.task));
        out.outputs.push(text);
        out.traces.push(decoded.trace);
    }
    out.answer = majority_vote(&out.votes);
    Ok(out)
}

fn score_result(
    item: &EvalItem,
    method: &Method,
    raw_output: String,
    extracted: Option<String>,
    calls: usize,
    tokens: usize,
    clients: MetricClients<'_>,
) -> MethodResult {
    let mut result = MethodResult {
        item_id: item.id.clone(),
        method: method.to_string(),
        task: item.task,
        category: item.category.clone(),
        raw_output,
        extracted,
        correct: None,
        scores: Default::default(),
        unavailable: Vec::new(),
        calls,
        tokens,
        traces: Vec::new(),
    };
    match item.task {
        Task::MultipleChoice | Task::Binary => {
            let ok = result.extracted.as_deref() == Some(item.reference.as_str());
            result.correct = Some(ok);
            result.scores.insert("correct".into(), f64::from(u8::from(ok)));
        }
        Task::Description => {
            let cand = result.extracted.clone().unwrap_or_default();
            result.scores.insert("rouge_l".into(), rouge_l(&cand, &item.reference));
            if let Some(e) = clients.embedder {
                match sts_score(&cand, &item.reference, e) {
                    Some(s) => {
                        result.scores.insert("sts".into(), s.cosine);
                        result.scores.insert("sts_x100".into(), s.scaled);
                    }
                    None => result.unavailable.push("sts".into()),
                }
            }
            if let Some(j) = clients.judge {
                match judge_score(&cand, &item.reference, j) {
                    Some(k) => {
                        result.scores.insert("judge".into(), f64::from(k));
                    }
                    None => result.unavailable.push("judge".into()),
                }
            }
        }
    }
    result
}

/// Runs one method on one item and scores it.
pub fn evaluate_item<S: Scorer + ?Sized>(
    item: &EvalItem,
    method: &Method,
    backend: &S,
    cfg: &HarnessConfig,
    clients: MetricClients<'_>,
) -> Result<MethodResult, HarnessError> {
    let seed = item_seed(cfg.seed, &item.id);
    let plan_err = |source| HarnessError::Plan {
        item: item.id.clone(),
        source,
    };
    match method.kind {
        MethodKind::SelfConsistency(j) => {
            let base = plan_for(item, 1, cfg, seed).map_err(plan_err)?;
            let plan = FrameSelectionPlan::replicated(base.set(0).to_vec(), item.total_frames, j).map_err(plan_err)?;
            let sc = self_consistency(item, &plan, backend, cfg, seed)?;
            let raw = sc.outputs.join("\n");
            let mut r = score_result(item, method, raw, sc.answer, sc.calls, sc.tokens, clients);
            if cfg.keep_traces {
                r.traces = sc.traces;
            }
            Ok(r)
        }
        MethodKind::Baseline | MethodKind::Vps(_) => {
            let j = method.streams();
            let plan = plan_for(item, j, cfg, seed).map_err(plan_err)?;
            let dcfg = DecodeConfig {
                weights: Weights::uniform(j),
                space: cfg.space,
                sampling: Sampling::Greedy,
                max_tokens: cfg.max_tokens,
                stop_tokens: cfg.stop_tokens.clone(),
                tcd: method.tcd.then_some(cfg.tcd),
                ritual_views: method.ritual.then(|| cfg.ritual_views.clone()),
                trace_top: cfg.trace_top,
            };
            let episode = Episode {
                video_ref: item.video_ref.clone(),
                prompt: build_prompt(item),
            };
            let decoded = decode(&episode, &plan, backend, &dcfg, seed).map_err(|f| HarnessError::Decode {
                item: item.id.clone(),
                source: f.error,
            })?;
            let raw = backend.detokenize(&decoded.tokens);
            let extracted = extract_answer(&raw, item.task);
            let mut r = score_result(
                item,
                method,
                raw,
                extracted,
                decoded.trace.calls(),
                decoded.tokens.len(),
                clients,
            );
            if cfg.keep_traces {
                r.traces.push(decoded.trace);
            }
            Ok(r)
        }
    }
}

/// Every method over every item, in parallel; results are ordered by method,
/// then item. Item-level failures (an infeasible plan, a bad response) are
/// recorded as unparseable results; an unreachable backend stops the run.
pub fn run_eval<S: Scorer + ?Sized>(
    items: &[EvalItem],
    methods: &[Method],
    backend: &S,
    cfg: &HarnessConfig,
    clients: MetricClients<'_>,
) -> Result<Vec<MethodResult>, RunFailure> {
    let pairs: Vec<(&Method, &EvalItem)> = methods.iter().flat_map(|m| items.iter().map(move |i| (m, i))).collect();
    let outcomes: Vec<Result<MethodResult, HarnessError>> = pairs
        .par_iter()
        .map(|(m, item)| evaluate_item(item, m, backend, cfg, clients))
        .collect();
    let mut results = Vec::with_capacity(outcomes.len());
    let mut fatal = None;
    for ((m, item), outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) if e.is_backend_down() => {
                if fatal.is_none() {
                    fatal = Some(e);
                }
            }
            Err(e) => {
                tracing::warn!(item = %item.id, method = %m, error = %e, "item failed");
                let mut r = score_result(item, m, String::new(), None, 0, 0, MetricClients::default());
                r.unavailable.push(format!("error: {e}"));
                results.push(r);
            }
        }
    }
    match fatal {
        Some(error) => Err(RunFailure { results, error }),
        None => Ok(results),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Distribution;
    use crate::backend::mock::MockScorer;
    use crate::backend::View;

    fn mc_item() -> EvalItem {
        EvalItem {
            id: "m1".into(),
            video_ref: "v".into(),
            total_frames: 8,
            task: Task::MultipleChoice,
            question: "Which?".into(),
            options: Some(vec!["x".into(), "y".into(), "z".into()]),
            reference: "B".into(),
            category: "short".into(),
        }
    }

    fn letters_mock(dist: &[f64], sets: &[Vec<usize>]) -> MockScorer {
        let mut m = MockScorer::new().with_vocab(vec!["A".into(), "B".into(), "C".into()]);
        for s in sets {
            m.insert(s.clone(), View::Identity, vec![], Distribution::from_probs(dist.to_vec()).unwrap());
        }
        m
    }

    #[test]
    fn seeds_depend_on_id_not_order() {
        assert_eq!(item_seed(3, "a"), item_seed(3, "a"));
        assert_ne!(item_seed(3, "a"), item_seed(3, "b"));
        assert_ne!(item_seed(3, "a"), item_seed(4, "a"));
    }

    #[test]
    fn baseline_scores_correct_item() {
        let item = mc_item();
        let cfg = HarnessConfig::new(2, 1);
        let mock = letters_mock(&[0.2, 0.7, 0.1], &[vec![0, 4]]);
        let r = evaluate_item(&item, &Method::baseline(), &mock, &cfg, MetricClients::default()).unwrap();
        assert_eq!(r.extracted.as_deref(), Some("B"));
        assert_eq!(r.correct, Some(true));
        assert_eq!(r.calls, 1);
    }

    #[test]
    fn self_consistency_greedy_limit_matches_single_stream() {
        let item = mc_item();
        let mut cfg = HarnessConfig::new(2, 1);
        cfg.sc_temperature = 0.0;
        let mock = letters_mock(&[0.2, 0.7, 0.1], &[vec![0, 4]]);
        let r = evaluate_item(&item, &Method::self_consistency(3), &mock, &cfg, MetricClients::default()).unwrap();
        assert_eq!(r.extracted.as_deref(), Some("B"));
        assert_eq!(r.calls, 3);
    }

    #[test]
    fn self_consistency_rejects_distinct_sets() {
        let plan = uniform_offset_plan(8, 2, 2).unwrap();
        let mock = letters_mock(&[0.2, 0.7, 0.1], plan.sets());
        let err = self_consistency(&mc_item(), &plan, &mock, &HarnessConfig::new(2, 1), 0).unwrap_err();
        assert!(matches!(err, HarnessError::NotReplicated));
    }

    #[test]
    fn infeasible_plan_is_recorded_not_fatal() {
        let item = mc_item();
        let cfg = HarnessConfig::new(4, 1);
        let mock = letters_mock(&[0.2, 0.7, 0.1], &[]);
        let rs = run_eval(&[item], &[Method::vps(4)], &mock, &cfg, MetricClients::default()).unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(rs[0].correct, Some(false));
        assert!(rs[0].unavailable[0].contains("infeasible"), "{:?}", rs[0].unavailable);
    }
}
