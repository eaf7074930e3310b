use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentc_core::blueprint::TokenUsage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub endpoint: String,
    pub bearer: Option<String>,
    pub body: Value,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("no reply within {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("request failed: {0}")]
    Failed(String),
}

/// One POST to a chat-completions endpoint. Implementations never retry.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpReply, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        (**self).send(request)
    }
}

/// Blocking HTTP via `ureq`.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(request.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&request.endpoint).header("content-type", "application/json");
        if let Some(key) = &request.bearer {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let started = Instant::now();
        let result = req.send_json(&request.body).and_then(|mut resp| {
            let status = resp.status().as_u16();
            resp.body_mut().read_to_string().map(|body| (status, body))
        });
        let latency_ms = started.elapsed().as_millis() as u64;
        match result {
            Ok((status, body)) => Ok(HttpReply {
                status,
                body,
                latency_ms,
            }),
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout {
                after_ms: request.timeout_ms,
            }),
            Err(e) => Err(TransportError::Failed(e.to_string())),
        }
    }
}

fn ok_status() -> u16 {
    200
}

fn stop() -> String {
    "stop".into()
}

/// A canned model reply. `content` may be a string or any JSON value, which
/// is sent as its compact serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubResponse {
    pub content: Value,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default = "stop")]
    pub finish_reason: String,
    /// Virtual latency. Over the request timeout, the call times out
    /// without waiting.
    #[serde(default)]
    pub latency_ms: u64,
}

impl StubResponse {
    pub fn new(content: impl Into<Value>, usage: TokenUsage) -> Self {
        StubResponse {
            content: content.into(),
            usage,
            status: 200,
            finish_reason: stop(),
            latency_ms: 0,
        }
    }

    fn content_text(&self) -> String {
        match &self.content {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }

    /// The chat-completions envelope a real endpoint would return.
    pub fn envelope(&self) -> Value {
        json!({
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": self.content_text()},
                "finish_reason": self.finish_reason,
            }],
            "usage": {
                "prompt_tokens": self.usage.input_tokens,
                "completion_tokens": self.usage.output_tokens,
            },
        })
    }
}

#[derive(Debug, Error)]
pub enum StubError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{0}: no responses")]
    Empty(String),
}

/// Replays canned replies in order; once exhausted, the last one repeats.
#[derive(Debug)]
pub struct StubTransport {
    responses: Vec<StubResponse>,
    next: AtomicUsize,
}

impl StubTransport {
    pub fn new(responses: Vec<StubResponse>) -> Self {
        assert!(!responses.is_empty(), "a stub needs at least one response");
        StubTransport {
            responses,
            next: AtomicUsize::new(0),
        }
    }

    pub fn single(response: StubResponse) -> Self {
        StubTransport::new(vec![response])
    }

    /// Reads a file holding one response object or an array of them.
    pub fn load(path: &Path) -> Result<Self, StubError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| StubError::Io {
            path: display.clone(),
            source,
        })?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            Many(Vec<StubResponse>),
            One(StubResponse),
        }
        let parsed: OneOrMany = serde_json::from_str(&text).map_err(|source| StubError::Parse {
            path: display.clone(),
            source,
        })?;
        let responses = match parsed {
            OneOrMany::Many(v) => v,
            OneOrMany::One(r) => vec![r],
        };
        if responses.is_empty() {
            return Err(StubError::Empty(display));
        }
        Ok(StubTransport::new(responses))
    }
}

impl Transport for StubTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        let r = &self.responses[i.min(self.responses.len() - 1)];
        if r.latency_ms > request.timeout_ms {
            return Err(TransportError::Timeout {
                after_ms: request.timeout_ms,
            });
        }
        let body = if (200..300).contains(&r.status) {
            r.envelope().to_string()
        } else {
            r.content_text()
        };
        Ok(HttpReply {
            status: r.status,
            body,
            latency_ms: r.latency_ms,
        })
    }
}

/// Counts every request that reaches the wrapped transport.
#[derive(Debug)]
pub struct CountingTransport<T> {
    inner: T,
    calls: Arc<AtomicUsize>,
}

impl<T: Transport> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        CountingTransport {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// A handle that keeps reading the count after the transport is moved.
    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.send(request)
    }
}
