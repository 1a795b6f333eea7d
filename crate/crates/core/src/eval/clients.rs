//! Clients for the text-similarity and judge metrics.
//!
//! Both speak the common chat-completion / embedding JSON shapes
//! (`/v1/chat/completions`, `/v1/embeddings`), so any compatible server or
//! the bundled stub can stand behind them.

use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use super::metrics::cosine;
use crate::backend::wire::{HttpEndpoint, RetryPolicy};
use crate::backend::BackendError;

pub const JUDGE_TOKEN_ENV: &str = "VPS_JUDGE_TOKEN";
pub const EMBED_TOKEN_ENV: &str = "VPS_EMBED_TOKEN";
pub const CHAT_PATH: &str = "/v1/chat/completions";
pub const EMBED_PATH: &str = "/v1/embeddings";

pub const JUDGE_SYSTEM_PROMPT: &str = "You are an intelligent chatbot designed for evaluating the correctness of generative outputs for video summaries.
Your task is to compare the predicted answer with the pseudo-reference answer and determine if they match meaningfully.
You should rely more on the video frames than the pseudo-reference caption.
------
INSTRUCTIONS:
- Focus on the meaningful match between the predicted answer and the pseudo-reference answer.
- Consider synonyms or paraphrases as valid matches.
- Evaluate the correctness of the prediction compared to the video frames.";

pub const JUDGE_USER_PROMPT: &str = "Given the reference caption, evaluate the quality of the predicted caption.
Provide your evaluation only as an integer value between 1 and 5, with 5 indicating the highest quality.
Please provide your evaluation in the following format: [evaluation]";

/// Anything that answers a system + user prompt pair.
pub trait Judge: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError>;
}

/// Anything that maps texts to embedding vectors, one per input, in order.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError>;
}

fn default_timeout_ms() -> u64 {
    60_000
}

/// Endpoint settings for a judge or embedding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl ServiceConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: String::new(),
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy::default(),
        }
    }

    fn http(&self, token_env: &str) -> HttpEndpoint {
        let token = std::env::var(token_env).ok().filter(|t| !t.is_empty());
        HttpEndpoint::new(
            self.endpoint.clone(),
            token,
            Duration::from_millis(self.timeout_ms),
            self.retry,
        )
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug)]
pub struct HttpJudge {
    http: HttpEndpoint,
    model: String,
}

impl HttpJudge {
    /// Bearer credential from `VPS_JUDGE_TOKEN`.
    pub fn new(cfg: &ServiceConfig) -> Self {
        Self {
            http: cfg.http(JUDGE_TOKEN_ENV),
            model: cfg.model.clone(),
        }
    }
}

impl Judge for HttpJudge {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                { "role": "system", "content": system },
                { "role": "user", "content": user },
            ],
        });
        let resp: ChatResponse = self.http.post_json(CHAT_PATH, &body)?.value;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Parse("chat response has no message content".into()))
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

#[derive(Debug)]
pub struct HttpEmbedder {
    http: HttpEndpoint,
    model: String,
}

impl HttpEmbedder {
    /// Bearer credential from `VPS_EMBED_TOKEN`.
    pub fn new(cfg: &ServiceConfig) -> Self {
        Self {
            http: cfg.http(EMBED_TOKEN_ENV),
            model: cfg.model.clone(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": self.model, "input": texts });
        let mut resp: EmbedResponse = self.http.post_json(EMBED_PATH, &body)?.value;
        if resp.data.len() != texts.len() {
            return Err(BackendError::Parse(format!(
                "{} embeddings for {} inputs",
                resp.data.len(),
                texts.len()
            )));
        }
        resp.data.sort_by_key(|d| d.index.unwrap_or(0));
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Sentence similarity as a raw cosine in `[-1, 1]` and scaled by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sts {
    pub cosine: f64,
    pub scaled: f64,
}

/// Cosine similarity of the two embeddings; `None` when the service fails
/// or returns a zero vector.
pub fn sts_score(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Option<Sts> {
    match embedder.embed(&[candidate, reference]) {
        Ok(v) if v.len() == 2 => cosine(&v[0], &v[1]).map(|c| Sts {
            cosine: c,
            scaled: 100.0 * c,
        }),
        Ok(v) => {
            warn!(got = v.len(), "embedding service returned the wrong number of vectors");
            None
        }
        Err(e) => {
            warn!(error = %e, "embedding service failed");
            None
        }
    }
}

static BRACKETED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*(\d+)\s*\]").expect("valid regex"));

/// First bracketed integer in a judge reply, if it lies in `1..=5`.
pub fn parse_judgement(reply: &str) -> Option<u8> {
    let n: u64 = BRACKETED.captures(reply)?[1].parse().ok()?;
    (1..=5).contains(&n).then_some(n as u8)
}

/// The user message: the fixed instructions followed by both captions.
pub fn judge_user_message(candidate: &str, reference: &str) -> String {
    format!("{JUDGE_USER_PROMPT}\nReference caption: {reference}\nPredicted caption: {candidate}")
}

/// Judge rating in `1..=5`. A reply without a valid rating is retried once;
/// `None` marks the metric unavailable for the item.
pub fn judge_score(candidate: &str, reference: &str, judge: &dyn Judge) -> Option<u8> {
    let user = judge_user_message(candidate, reference);
    for attempt in 0..2 {
        match judge.complete(JUDGE_SYSTEM_PROMPT, &user) {
            Ok(reply) => {
                if let Some(k) = parse_judgement(&reply) {
                    return Some(k);
                }
                warn!(attempt, %reply, "judge reply carries no rating in 1..=5");
            }
            Err(e) => {
                warn!(error = %e, "judge service failed");
                return None;
            }
        }
    }
    None
}
