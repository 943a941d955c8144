//! HTTP client for a model server speaking the JSON inference protocol.
//!
//! Requests go to `POST <endpoint>/infer` as
//! `{"op": "generate"|"word_prob", "event", "dimension", "word"?}` and come
//! back as `{"generated_text"}`, `{"prob"}` or `{"error", "detail"}`. The
//! model identity is read from `GET <endpoint>/health` unless configured.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_event, check_prob, BackendError, CommonsenseBackend, Dimension};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Per-request deadline.
    pub timeout_ms: u64,
    /// Extra attempts after the first failed one.
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_ms: u64,
    /// Skips the health probe when set.
    pub identity: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 200,
            identity: None,
        }
    }
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            ..Default::default()
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    identity: String,
    calls: AtomicUsize,
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fail(BackendError),
}

impl RemoteBackend {
    /// Builds the client and resolves the model identity.
    pub fn connect(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.endpoint.trim().is_empty() {
            return Err(BackendError::InvalidQuery("empty remote endpoint".into()));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        let mut backend = RemoteBackend {
            config,
            agent,
            identity: String::new(),
            calls: AtomicUsize::new(0),
        };
        backend.identity = match backend.config.identity.clone() {
            Some(id) => id,
            None => backend.fetch_identity()?,
        };
        Ok(backend)
    }

    /// Number of inference requests sent, retries included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn fetch_identity(&self) -> Result<String, BackendError> {
        let url = self.url("health");
        let text = self.with_retries(|| match self.agent.get(&url).call() {
            Ok(resp) => match resp.into_string() {
                Ok(t) => Attempt::Done(Value::String(t)),
                Err(e) => Attempt::Retry(e.to_string()),
            },
            Err(e) => classify_error(e),
        })?;
        let text = text.as_str().unwrap_or_default().trim().to_string();
        let identity = match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(obj)) => ["identity", "model"]
                .iter()
                .find_map(|k| obj.get(*k).and_then(Value::as_str).map(str::to_string)),
            Ok(Value::String(s)) => Some(s),
            _ => Some(text.clone()),
        };
        identity
            .filter(|s| !s.is_empty())
            .ok_or_else(|| BackendError::Protocol(format!("health endpoint returned no identity: {text:?}")))
    }

    fn with_retries<F: Fn() -> Attempt>(&self, attempt: F) -> Result<Value, BackendError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for n in 0..=self.config.retries {
            if n > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match attempt() {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(m) => last = m,
            }
        }
        Err(BackendError::Transport {
            attempts: self.config.retries + 1,
            message: last,
        })
    }

    fn infer(&self, body: Value) -> Result<Value, BackendError> {
        let url = self.url("infer");
        let reply = self.with_retries(|| {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.agent.post(&url).send_json(body.clone()) {
                Ok(resp) => match resp.into_json::<Value>() {
                    Ok(v) => Attempt::Done(v),
                    Err(e) => Attempt::Fail(BackendError::Protocol(format!("unreadable response: {e}"))),
                },
                Err(e) => classify_error(e),
            }
        })?;
        if let Some(code) = reply.get("error") {
            return Err(remote_error(code, &reply));
        }
        Ok(reply)
    }
}

fn remote_error(code: &Value, reply: &Value) -> BackendError {
    BackendError::Remote {
        code: code.as_str().map(str::to_string).unwrap_or_else(|| code.to_string()),
        detail: reply
            .get("detail")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
    }
}

/// Server-side 5xx and transport failures are retried; anything the server
/// reports as a client error is final.
fn classify_error(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Status(code, resp) if code < 500 => {
            let body: Value = resp.into_json().unwrap_or(Value::Null);
            match body.get("error") {
                Some(c) => Attempt::Fail(remote_error(c, &body)),
                None => Attempt::Fail(BackendError::Remote {
                    code: code.to_string(),
                    detail: body.to_string(),
                }),
            }
        }
        ureq::Error::Status(code, _) => Attempt::Retry(format!("HTTP {code}")),
        ureq::Error::Transport(t) => Attempt::Retry(t.to_string()),
    }
}

impl CommonsenseBackend for RemoteBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        check_event(event)?;
        let reply = self.infer(json!({"op": "generate", "event": event, "dimension": dimension}))?;
        match reply.get("generated_text").and_then(Value::as_str) {
            Some(t) if !t.trim().is_empty() => Ok(t.to_string()),
            _ => Err(BackendError::Protocol(format!("no generated_text in {reply}"))),
        }
    }

    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        check_event(event)?;
        let reply = self.infer(json!({"op": "word_prob", "event": event, "dimension": dimension, "word": word}))?;
        let p = reply
            .get("prob")
            .and_then(Value::as_f64)
            .ok_or_else(|| BackendError::Protocol(format!("no prob in {reply}")))?;
        check_prob(event, word, p)
    }
}
