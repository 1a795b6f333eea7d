use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use tracing::info;
use vps_core::backend::mock::MockScorer;
use vps_core::backend::toy::{toy_episode, ToyScorer, ToyWorld};
use vps_core::backend::wire::{WireConfig, WireScorer};
use vps_core::backend::{Scorer, View};
use vps_core::eval::clients::{HttpEmbedder, HttpJudge};
use vps_core::eval::harness::MetricClients;
use vps_core::eval::report::{accuracy_csv, RunSummary};
use vps_core::eval::{load_dataset, run_eval, EvalItem, Strategy};
use vps_core::{Distribution, Space, TokenId};

use crate::config::{BackendKind, FileConfig, Overrides, RunConfig};
use crate::report::write_reports;
use crate::{read_input, runtime, usage, CliResult};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL dataset. The toy backend synthesizes episodes when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Scoring endpoint base URL for the wire backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Frames per stream.
    #[arg(long, short = 'k')]
    frames: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Fusion space: probability or logit.
    #[arg(long)]
    space: Option<Space>,
    /// Comma-separated methods, e.g. `baseline,vps:4,vps:4+tcd,sc:4`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-step decode traces to traces.jsonl.
    #[arg(long)]
    trace: bool,
    /// Worker threads for concurrent episodes.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Toy episodes to synthesize when no dataset is given.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    frame_set: Vec<usize>,
    #[serde(default)]
    view: View,
    #[serde(default)]
    generated: Vec<TokenId>,
    probs: Vec<f64>,
}

fn mock_scorer(path: &PathBuf, vocab: Option<Vec<String>>) -> CliResult<MockScorer> {
    let text = read_input(path)?;
    let mut scorer = MockScorer::new();
    if let Some(v) = vocab {
        scorer = scorer.with_vocab(v);
    }
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |e: String| usage(format!("{}:{}: {e}", path.display(), n + 1));
        let f: Fixture = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let d = Distribution::from_probs(f.probs).map_err(|e| bad(e.to_string()))?;
        scorer.insert(f.frame_set, f.view, f.generated, d);
    }
    Ok(scorer)
}

fn toy_world(cfg: &RunConfig) -> CliResult<ToyWorld> {
    ToyWorld::symmetric(cfg.toy.labels, cfg.toy.accuracy).map_err(|e| usage(e.to_string()))
}

fn scorer(cfg: &RunConfig) -> CliResult<Box<dyn Scorer>> {
    let b = &cfg.backend;
    Ok(match b.kind {
        BackendKind::Toy => Box::new(ToyScorer::new(toy_world(cfg)?)),
        BackendKind::Wire => {
            let mut w = WireConfig::new(b.endpoint.clone().expect("validated"));
            if let Some(t) = b.timeout_ms {
                w.timeout_ms = t;
            }
            if let Some(r) = b.retry {
                w.retry = r;
            }
            w.top = b.top;
            w.vocab = b.vocab.clone();
            Box::new(WireScorer::from_env(w))
        }
        BackendKind::Mock => Box::new(mock_scorer(b.fixtures.as_ref().expect("validated"), b.vocab.clone())?),
    })
}

fn items(cfg: &RunConfig) -> CliResult<Vec<EvalItem>> {
    let items = match (&cfg.dataset, cfg.backend.kind) {
        (Some(path), _) => load_dataset(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        (None, BackendKind::Toy) => {
            let world = toy_world(cfg)?;
            (0..cfg.toy.episodes as u64)
                .map(|i| toy_episode(&world, cfg.toy.frames, cfg.toy.seed + i).map(|e| e.item))
                .collect::<Result<_, _>>()
                .map_err(|e| usage(e.to_string()))?
        }
        (None, _) => return Err(usage("no dataset given")),
    };
    if items.is_empty() {
        return Err(usage("the dataset is empty"));
    }
    Ok(items)
}

pub fn cmd_run(a: RunArgs) -> CliResult {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let overrides = Overrides {
        dataset: a.dataset,
        backend: a.backend,
        endpoint: a.endpoint,
        frames: a.frames,
        strategy: a.strategy,
        space: a.space,
        methods: a.methods,
        seed: a.seed,
        out: a.out,
        trace: a.trace,
        jobs: a.jobs,
        max_tokens: a.max_tokens,
        episodes: a.episodes,
    };
    let mut cfg = RunConfig::resolve(file, overrides)?;
    cfg.harness.keep_traces = cfg.trace;
    if let Some(j) = cfg.jobs {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let items = items(&cfg)?;
    let backend = scorer(&cfg)?;
    let judge = cfg.judge.as_ref().map(HttpJudge::new);
    let embedder = cfg.embed.as_ref().map(HttpEmbedder::new);
    let clients = MetricClients {
        judge: judge.as_ref().map(|j| j as _),
        embedder: embedder.as_ref().map(|e| e as _),
    };
    info!(items = items.len(), methods = cfg.methods.len(), "starting run");

    let (results, failure) = match run_eval(&items, &cfg.methods, backend.as_ref(), &cfg.harness, clients) {
        Ok(r) => (r, None),
        Err(f) => (f.results, Some(f.error)),
    };
    let mut summary = RunSummary::build(
        &results,
        items.len(),
        &cfg.methods,
        cfg.harness.frames_per_stream,
        &cfg.harness.strategy.to_string(),
        cfg.harness.seed,
    );
    summary.error = failure.as_ref().map(ToString::to_string);
    write_reports(&cfg.out, &results, &summary, cfg.trace)?;
    match failure {
        Some(e) => Err(runtime(format!(
            "run stopped: {e}; {} partial results written to {}",
            results.len(),
            cfg.out.display()
        ))),
        None => {
            print!("{}", accuracy_csv(&summary.accuracy));
            eprintln!("{} results written to {}", results.len(), cfg.out.display());
            Ok(())
        }
    }
}
