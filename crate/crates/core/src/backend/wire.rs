//! JSON-over-HTTP scoring client.
//!
//! Requests are POSTed to `<endpoint>/v1/score`. Transport failures (refused
//! or dropped connections, timeouts) are retried with exponential backoff up
//! to `max_retries` times; a non-success status is returned as an error
//! without retrying. The bearer credential comes from `VPS_BACKEND_TOKEN`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{BackendError, ScoreRequest, ScoreResponse, Scored, Scorer, Want};
use crate::aggregation::TokenId;

pub const BACKEND_TOKEN_ENV: &str = "VPS_BACKEND_TOKEN";
pub const SCORE_PATH: &str = "/v1/score";
const BODY_EXCERPT_CHARS: usize = 200;

/// Exponential backoff: `base * 2^attempt`, capped at `max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base_ms: 100,
            backoff_max_ms: 2_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// One HTTP service: base URL, optional bearer token, timeout and retry policy.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    base: String,
    token: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

/// Parsed body plus the number of retries it took.
#[derive(Debug, Clone, PartialEq)]
pub struct WithRetries<T> {
    pub value: T,
    pub retries: u32,
}

impl HttpEndpoint {
    pub fn new(base: impl Into<String>, token: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            retry,
            agent,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// POSTs `body` as JSON and parses the JSON reply.
    pub fn post_json<B, R>(&self, path: &str, body: &B) -> Result<WithRetries<R>, BackendError>
    where
        B: Serialize + ?Sized,
        R: DeserializeOwned,
    {
        let url = format!("{}{}", self.base, path);
        let payload =
            serde_json::to_vec(body).map_err(|e| BackendError::Config(format!("request encoding: {e}")))?;
        let mut attempt = 0u32;
        loop {
            match self.send_once(&url, &payload) {
                Ok((status, text)) => {
                    if !(200..300).contains(&status) {
                        let body: String = text.chars().take(BODY_EXCERPT_CHARS).collect();
                        return Err(BackendError::Status { status, body });
                    }
                    let value = serde_json::from_str(&text).map_err(|e| BackendError::Parse(e.to_string()))?;
                    return Ok(WithRetries {
                        value,
                        retries: attempt,
                    });
                }
                Err(message) => {
                    if attempt >= self.retry.max_retries {
                        return Err(BackendError::Transport {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    let delay = self.retry.delay(attempt);
                    warn!(%url, attempt, ?delay, %message, "transport failure, retrying");
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    /// `Ok((status, body))` for any completed exchange, `Err` for transport failures.
    fn send_once(&self, url: &str, payload: &[u8]) -> Result<(u16, String), String> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(payload).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        debug!(%url, status, "response received");
        Ok((status, text))
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Client settings, loadable from the run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Request only the top-`m` tokens instead of the full vector.
    #[serde(default)]
    pub top: Option<usize>,
    /// Token strings for rendering generated output.
    #[serde(default)]
    pub vocab: Option<Vec<String>>,
}

impl WireConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy::default(),
            top: None,
            vocab: None,
        }
    }
}

/// [`Scorer`] backed by a remote `/v1/score` endpoint.
#[derive(Debug)]
pub struct WireScorer {
    endpoint: HttpEndpoint,
    want: Want,
    vocab: Option<Vec<String>>,
    retries: AtomicUsize,
    conversions: AtomicUsize,
}

impl WireScorer {
    pub fn new(cfg: WireConfig, token: Option<String>) -> Self {
        let endpoint = HttpEndpoint::new(
            cfg.endpoint,
            token,
            Duration::from_millis(cfg.timeout_ms),
            cfg.retry,
        );
        Self {
            endpoint,
            want: cfg.top.map_or(Want::Full, Want::Top),
            vocab: cfg.vocab,
            retries: AtomicUsize::new(0),
            conversions: AtomicUsize::new(0),
        }
    }

    /// Reads the credential from `VPS_BACKEND_TOKEN` when set.
    pub fn from_env(cfg: WireConfig) -> Self {
        let token = std::env::var(BACKEND_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(cfg, token)
    }

    /// Raw exchange: the parsed response and the retries it took.
    pub fn wire_score(&self, req: &ScoreRequest) -> Result<WithRetries<ScoreResponse>, BackendError> {
        let mut req = req.clone();
        req.want = self.want;
        let out = self.endpoint.post_json::<_, ScoreResponse>(SCORE_PATH, &req)?;
        self.retries.fetch_add(out.retries as usize, Ordering::SeqCst);
        Ok(out)
    }

    /// Total retries across all requests so far.
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::SeqCst)
    }

    /// Number of top-`m` responses converted to full distributions.
    pub fn conversions(&self) -> usize {
        self.conversions.load(Ordering::SeqCst)
    }
}

impl Scorer for WireScorer {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError> {
        let scored = self.wire_score(req)?.value.into_scored()?;
        if scored.truncated {
            self.conversions.fetch_add(1, Ordering::SeqCst);
        }
        Ok(scored)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        match &self.vocab {
            Some(v) => tokens
                .iter()
                .map(|&t| v.get(t as usize).map_or("", String::as_str))
                .collect(),
            None => {
                let parts: Vec<String> = tokens.iter().map(|t| format!("<{t}>")).collect();
                parts.join(" ")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            backoff_base_ms: 100,
            backoff_max_ms: 1_000,
        };
        let delays: Vec<u64> = (0..6).map(|a| p.delay(a).as_millis() as u64).collect();
        assert_eq!(delays, vec![100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.delay(200), Duration::from_millis(1000));
    }

    #[test]
    fn refused_connection_is_transport_error() {
        // bind then drop to get a port with nothing listening
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let cfg = WireConfig {
            retry: RetryPolicy {
                max_retries: 1,
                backoff_base_ms: 1,
                backoff_max_ms: 1,
            },
            ..WireConfig::new(format!("http://127.0.0.1:{port}"))
        };
        let scorer = WireScorer::new(cfg, None);
        let req = ScoreRequest {
            video_ref: "v".into(),
            frame_set: vec![0],
            view: Default::default(),
            prompt_text: String::new(),
            generated: vec![],
            want: Want::Full,
        };
        match scorer.score(&req) {
            Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
