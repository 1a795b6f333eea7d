//! Reference stub server for offline tests and demos.
//!
//! Serves three JSON endpoints over plain HTTP/1.1 on a loopback port:
//!
//! - `POST /v1/score`: answers with the wrapped [`Scorer`], honoring `want`.
//! - `POST /v1/chat/completions`: judge replies, scripted or a default `"[3]"`.
//! - `POST /v1/embeddings`: a case-insensitive hashed bag-of-words embedder.
//!
//! [`StubServer::fail_next`] drops the next connections without a response so
//! client retry paths can be exercised.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};
use tracing::debug;

use super::{ScoreRequest, ScoreResponse, Scorer, Want};

pub const EMBEDDING_DIM: usize = 256;
pub const DEFAULT_JUDGE_REPLY: &str = "[3]";
const MAX_HEADERS: usize = 32;
const MAX_REQUEST_BYTES: usize = 8 << 20;

struct State {
    scorer: Arc<dyn Scorer>,
    token: Option<String>,
    fail_next: AtomicUsize,
    dropped: AtomicUsize,
    score_requests: AtomicUsize,
    judge_replies: Mutex<VecDeque<String>>,
    judge_requests: Mutex<Vec<Value>>,
    shutdown: AtomicBool,
}

/// Running stub server; stops when dropped.
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<State>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `127.0.0.1:0` and starts serving.
    pub fn start(scorer: Arc<dyn Scorer>, token: Option<String>) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", scorer, token)
    }

    pub fn bind(addr: &str, scorer: Arc<dyn Scorer>, token: Option<String>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(State {
            scorer,
            token,
            fail_next: AtomicUsize::new(0),
            dropped: AtomicUsize::new(0),
            score_requests: AtomicUsize::new(0),
            judge_replies: Mutex::new(VecDeque::new()),
            judge_requests: Mutex::new(Vec::new()),
            shutdown: AtomicBool::new(false),
        });
        let accept_state = Arc::clone(&state);
        let handle = thread::spawn(move || accept_loop(listener, accept_state));
        Ok(Self {
            addr,
            state,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Drop the next `n` connections without answering.
    pub fn fail_next(&self, n: usize) {
        self.state.fail_next.store(n, Ordering::SeqCst);
    }

    pub fn dropped_connections(&self) -> usize {
        self.state.dropped.load(Ordering::SeqCst)
    }

    pub fn score_requests(&self) -> usize {
        self.state.score_requests.load(Ordering::SeqCst)
    }

    /// Queue judge replies, served in order before falling back to the default.
    pub fn script_judge<I, S>(&self, replies: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut q = self.state.judge_replies.lock().expect("judge queue poisoned");
        q.extend(replies.into_iter().map(Into::into));
    }

    /// Bodies of every chat-completion request received so far.
    pub fn judge_requests(&self) -> Vec<Value> {
        self.state.judge_requests.lock().expect("judge log poisoned").clone()
    }

    /// Blocks the calling thread until the server is stopped from elsewhere.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.state.shutdown.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, state: Arc<State>) {
    for conn in listener.incoming() {
        if state.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let pending = state.fail_next.load(Ordering::SeqCst);
        if pending > 0 {
            state.fail_next.store(pending - 1, Ordering::SeqCst);
            state.dropped.fetch_add(1, Ordering::SeqCst);
            drop(stream);
            continue;
        }
        let st = Arc::clone(&state);
        thread::spawn(move || {
            if let Err(e) = handle_connection(stream, &st) {
                debug!(error = %e, "stub connection error");
            }
        });
    }
}

struct HttpRequest {
    method: String,
    path: String,
    authorization: Option<String>,
    body: Vec<u8>,
}

fn read_request(stream: &mut TcpStream) -> io::Result<HttpRequest> {
    let mut buf = Vec::with_capacity(4096);
    let mut chunk = [0u8; 4096];
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        buf.extend_from_slice(&chunk[..n]);
        let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
        let mut req = httparse::Request::new(&mut headers);
        let status = req
            .parse(&buf)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if let httparse::Status::Complete(head_len) = status {
            let mut content_length = 0usize;
            let mut authorization = None;
            for h in req.headers.iter() {
                if h.name.eq_ignore_ascii_case("content-length") {
                    content_length = std::str::from_utf8(h.value)
                        .ok()
                        .and_then(|v| v.trim().parse().ok())
                        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad content-length"))?;
                } else if h.name.eq_ignore_ascii_case("authorization") {
                    authorization = Some(String::from_utf8_lossy(h.value).into_owned());
                }
            }
            if content_length > MAX_REQUEST_BYTES {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "request too large"));
            }
            let method = req.method.unwrap_or("").to_string();
            let path = req.path.unwrap_or("").to_string();
            let mut body = buf[head_len..].to_vec();
            while body.len() < content_length {
                let n = stream.read(&mut chunk)?;
                if n == 0 {
                    return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated body"));
                }
                body.extend_from_slice(&chunk[..n]);
            }
            body.truncate(content_length);
            return Ok(HttpRequest {
                method,
                path,
                authorization,
                body,
            });
        }
        if buf.len() > MAX_REQUEST_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "header too large"));
        }
    }
}

fn write_response(stream: &mut TcpStream, status: u16, body: &Value) -> io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Internal Server Error",
    };
    let payload = body.to_string();
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(payload.as_bytes())?;
    stream.flush()
}

fn error_body(message: impl Into<String>) -> Value {
    json!({ "error": message.into() })
}

fn handle_connection(mut stream: TcpStream, state: &State) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let req = read_request(&mut stream)?;
    if let Some(token) = &state.token {
        let expected = format!("Bearer {token}");
        if req.authorization.as_deref() != Some(expected.as_str()) {
            return write_response(&mut stream, 401, &error_body("missing or wrong bearer token"));
        }
    }
    if req.method != "POST" {
        return write_response(&mut stream, 405, &error_body("only POST is served"));
    }
    let body: Value = match serde_json::from_slice(&req.body) {
        Ok(v) => v,
        Err(e) => return write_response(&mut stream, 400, &error_body(format!("bad json: {e}"))),
    };
    let (status, reply) = match req.path.as_str() {
        "/v1/score" => serve_score(state, body),
        "/v1/chat/completions" => serve_judge(state, body),
        "/v1/embeddings" => serve_embeddings(body),
        other => (404, error_body(format!("no route {other}"))),
    };
    write_response(&mut stream, status, &reply)
}

fn serve_score(state: &State, body: Value) -> (u16, Value) {
    state.score_requests.fetch_add(1, Ordering::SeqCst);
    let req: ScoreRequest = match serde_json::from_value(body) {
        Ok(r) => r,
        Err(e) => return (400, error_body(format!("bad score request: {e}"))),
    };
    match state.scorer.score(&req) {
        Ok(scored) => {
            let resp = match req.want {
                Want::Full => ScoreResponse::full(&scored.distribution),
                Want::Top(m) => ScoreResponse::top_of(&scored.distribution, m),
            };
            (200, serde_json::to_value(resp).expect("response serializes"))
        }
        Err(e) => (500, error_body(e.to_string())),
    }
}

fn serve_judge(state: &State, body: Value) -> (u16, Value) {
    state
        .judge_requests
        .lock()
        .expect("judge log poisoned")
        .push(body);
    let reply = state
        .judge_replies
        .lock()
        .expect("judge queue poisoned")
        .pop_front()
        .unwrap_or_else(|| DEFAULT_JUDGE_REPLY.to_string());
    (
        200,
        json!({
            "choices": [{ "index": 0, "message": { "role": "assistant", "content": reply } }]
        }),
    )
}

fn serve_embeddings(body: Value) -> (u16, Value) {
    let inputs: Vec<String> = match body.get("input") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(a)) => a
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => return (400, error_body("`input` must be a string or array of strings")),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, text)| json!({ "index": i, "embedding": hashed_embedding(text) }))
        .collect();
    (200, json!({ "data": data }))
}

/// Lowercased, punctuation-stripped bag of words hashed into [`EMBEDDING_DIM`] buckets.
pub fn hashed_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    for word in cleaned.split_whitespace() {
        let h = word.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        v[(h % EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    v
}
