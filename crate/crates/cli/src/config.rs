//! Run configuration: a TOML file, overridden field by field by flags.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use vps_core::backend::wire::RetryPolicy;
use vps_core::eval::clients::ServiceConfig;
use vps_core::eval::{HarnessConfig, Method, Strategy};
use vps_core::{Space, TcdConfig, TokenId};

use crate::{read_input, usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Synthetic world with exact posteriors.
    #[default]
    Toy,
    /// Remote scoring endpoint.
    Wire,
    /// Fixed distributions from a fixtures file.
    Mock,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_ms: Option<u64>,
    pub retry: Option<RetryPolicy>,
    /// Ask the endpoint for only the top-m tokens.
    pub top: Option<usize>,
    /// Token strings, for rendering output.
    pub vocab: Option<Vec<String>>,
    /// Mock backend: JSONL of `{frame_set, view, generated, probs}`.
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    #[serde(default = "default_labels")]
    pub labels: usize,
    #[serde(default = "default_accuracy")]
    pub accuracy: f64,
    /// Synthesize this many episodes when no dataset is given.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_toy_frames")]
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_labels() -> usize {
    4
}
fn default_accuracy() -> f64 {
    0.55
}
fn default_episodes() -> usize {
    200
}
fn default_toy_frames() -> usize {
    64
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            labels: default_labels(),
            accuracy: default_accuracy(),
            episodes: default_episodes(),
            frames: default_toy_frames(),
            seed: 0,
        }
    }
}

/// The file layout. Every field is optional; see [`RunConfig`] for defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub frames: Option<usize>,
    pub strategy: Option<Strategy>,
    pub space: Option<Space>,
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub max_tokens: Option<usize>,
    pub stop_tokens: Option<Vec<TokenId>>,
    pub trace: Option<bool>,
    pub trace_top: Option<usize>,
    pub jobs: Option<usize>,
    pub sc_temperature: Option<f64>,
    pub ritual_views: Option<Vec<String>>,
    /// JSON object: item id -> per-frame scores.
    pub bolt_scores: Option<PathBuf>,
    pub tcd: Option<TcdConfig>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub toy: ToySection,
    pub judge: Option<ServiceConfig>,
    pub embed: Option<ServiceConfig>,
}

impl FileConfig {
    pub fn load(path: &PathBuf) -> CliResult<Self> {
        let text = read_input(path)?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }
}

/// Flag values; `None` keeps the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub frames: Option<usize>,
    pub strategy: Option<Strategy>,
    pub space: Option<Space>,
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trace: bool,
    pub jobs: Option<usize>,
    pub max_tokens: Option<usize>,
    pub episodes: Option<usize>,
}

/// Fully resolved and validated settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub methods: Vec<Method>,
    pub harness: HarnessConfig,
    pub trace: bool,
    pub jobs: Option<usize>,
    pub backend: BackendSection,
    pub toy: ToySection,
    pub judge: Option<ServiceConfig>,
    pub embed: Option<ServiceConfig>,
}

const DEFAULT_METHODS: [&str; 2] = ["baseline", "vps:4"];

impl RunConfig {
    pub fn resolve(file: FileConfig, o: Overrides) -> CliResult<Self> {
        let method_names = o
            .methods
            .or(file.methods)
            .unwrap_or_else(|| DEFAULT_METHODS.map(String::from).to_vec());
        let methods = method_names
            .iter()
            .map(|m| m.parse::<Method>().map_err(usage))
            .collect::<CliResult<Vec<_>>>()?;
        if methods.is_empty() {
            return Err(usage("no methods requested"));
        }

        let frames = o.frames.or(file.frames).unwrap_or(4);
        if frames == 0 {
            return Err(usage("frames per stream must be at least 1"));
        }
        let mut harness = HarnessConfig::new(frames, o.max_tokens.or(file.max_tokens).unwrap_or(16));
        if harness.max_tokens == 0 {
            return Err(usage("max_tokens must be at least 1"));
        }
        harness.strategy = o.strategy.or(file.strategy).unwrap_or_default();
        harness.space = o.space.or(file.space).unwrap_or_default();
        harness.seed = o.seed.or(file.seed).unwrap_or(0);
        harness.trace_top = file.trace_top;
        if let Some(t) = file.tcd {
            t.validate().map_err(|e| usage(e.to_string()))?;
            harness.tcd = t;
        }
        if let Some(v) = file.ritual_views {
            if v.is_empty() {
                return Err(usage("ritual_views must not be empty"));
            }
            harness.ritual_views = v;
        }
        if let Some(t) = file.sc_temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(usage(format!("sc_temperature must be positive, got {t}")));
            }
            harness.sc_temperature = t;
        }
        if let Some(path) = &file.bolt_scores {
            harness.bolt_scores = load_bolt_scores(path)?;
        }

        let mut backend = file.backend;
        if let Some(kind) = o.backend {
            backend.kind = kind;
        }
        if let Some(e) = o.endpoint {
            backend.endpoint = Some(e);
        }
        if backend.kind == BackendKind::Wire && backend.endpoint.is_none() {
            return Err(usage("the wire backend needs an endpoint"));
        }
        if backend.kind == BackendKind::Mock && backend.fixtures.is_none() {
            return Err(usage("the mock backend needs backend.fixtures"));
        }
        let mut toy = file.toy;
        if let Some(n) = o.episodes {
            toy.episodes = n;
        }
        harness.stop_tokens = match file.stop_tokens {
            Some(s) => s.into_iter().collect(),
            // the toy world ends every answer with its end token
            None if backend.kind == BackendKind::Toy => BTreeSet::from([toy.labels as TokenId]),
            None => BTreeSet::new(),
        };
        let jobs = o.jobs.or(file.jobs);
        if jobs == Some(0) {
            return Err(usage("--jobs must be at least 1"));
        }

        Ok(Self {
            dataset: o.dataset.or(file.dataset),
            out: o.out.or(file.out).unwrap_or_else(|| PathBuf::from("vps-out")),
            methods,
            harness,
            trace: o.trace || file.trace.unwrap_or(false),
            jobs,
            backend,
            toy,
            judge: file.judge,
            embed: file.embed,
        })
    }
}

fn load_bolt_scores(path: &Path) -> CliResult<HashMap<String, Vec<f64>>> {
    let text = read_input(&path.to_path_buf())?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str(
            r#"
            frames = 8
            seed = 3
            methods = ["vps:2"]
            [backend]
            kind = "wire"
            endpoint = "http://x"
            "#,
        )
        .unwrap();
        let o = Overrides {
            frames: Some(2),
            backend: Some(BackendKind::Toy),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(file, o).unwrap();
        assert_eq!(cfg.harness.frames_per_stream, 2);
        assert_eq!(cfg.harness.seed, 3);
        assert_eq!(cfg.methods, vec![Method::vps(2)]);
        assert_eq!(cfg.backend.kind, BackendKind::Toy);
        assert_eq!(cfg.harness.stop_tokens, BTreeSet::from([4]));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<FileConfig>("frame = 4").is_err());
        let bad_method = Overrides {
            methods: Some(vec!["beam:3".into()]),
            ..Default::default()
        };
        assert!(RunConfig::resolve(FileConfig::default(), bad_method).is_err());
        let wire = Overrides {
            backend: Some(BackendKind::Wire),
            ..Default::default()
        };
        assert!(RunConfig::resolve(FileConfig::default(), wire).is_err());
    }
}
