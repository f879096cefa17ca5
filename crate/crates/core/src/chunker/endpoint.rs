//! Blocking JSON-over-HTTP clients for the optional embedding and completion services.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after the first one, only for timeouts, transport failures and 5xx.
    #[serde(default)]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig { url: url.into(), timeout_ms: default_timeout_ms(), retries: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("request to {url} timed out after {attempts} attempt(s)")]
    Timeout { url: String, attempts: u32 },
    #[error("{url} answered with status {code}: {body}")]
    Status { url: String, code: u16, body: String },
    #[error("transport failure talking to {url}: {message}")]
    Transport { url: String, message: String },
    #[error("malformed response from {url}: {message}")]
    Malformed { url: String, message: String },
}

impl EndpointError {
    pub fn is_retryable(&self) -> bool {
        match self {
            EndpointError::Timeout { .. } | EndpointError::Transport { .. } => true,
            EndpointError::Status { code, .. } => *code >= 500,
            EndpointError::Malformed { .. } => false,
        }
    }
}

fn is_timeout(e: &ureq::Error) -> bool {
    match e {
        ureq::Error::Timeout(_) => true,
        ureq::Error::Io(io) => matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
        _ => false,
    }
}

fn post_once(cfg: &EndpointConfig, payload: &serde_json::Value, attempt: u32) -> Result<serde_json::Value, EndpointError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(cfg.timeout_ms.max(1))))
        .http_status_as_error(false)
        .build()
        .into();
    let url = cfg.url.clone();
    let transport = |e: ureq::Error| {
        if is_timeout(&e) {
            EndpointError::Timeout { url: url.clone(), attempts: attempt }
        } else {
            EndpointError::Transport { url: url.clone(), message: e.to_string() }
        }
    };
    let mut resp = agent.post(&cfg.url).send_json(payload).map_err(transport)?;
    let code = resp.status().as_u16();
    let body = resp.body_mut().read_to_string().map_err(transport)?;
    if !(200..300).contains(&code) {
        return Err(EndpointError::Status { url, code, body });
    }
    serde_json::from_str(&body).map_err(|e| EndpointError::Malformed { url, message: e.to_string() })
}

/// POSTs `payload`, retrying up to `cfg.retries` extra times on retryable failures.
pub fn post_json(cfg: &EndpointConfig, payload: &serde_json::Value) -> Result<serde_json::Value, EndpointError> {
    let mut attempt = 1;
    loop {
        match post_once(cfg, payload, attempt) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt <= cfg.retries => {
                log::warn!("attempt {attempt} failed: {e}; retrying");
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// `{"input": text}` -> `{"embedding": [float]}`.
pub fn embed_external(text: &str, cfg: &EndpointConfig) -> Result<Vec<f64>, EndpointError> {
    let v = post_json(cfg, &json!({ "input": text }))?;
    let malformed = |message: &str| EndpointError::Malformed { url: cfg.url.clone(), message: message.to_string() };
    let arr = v.get("embedding").and_then(|e| e.as_array()).ok_or_else(|| malformed("missing \"embedding\" array"))?;
    if arr.is_empty() {
        return Err(malformed("empty embedding"));
    }
    arr.iter()
        .map(|x| x.as_f64().filter(|f| f.is_finite()).ok_or_else(|| malformed("non-numeric embedding entry")))
        .collect()
}

/// `{"prompt": prompt}` -> `{"text": answer}`.
pub fn complete(prompt: &str, cfg: &EndpointConfig) -> Result<String, EndpointError> {
    let v = post_json(cfg, &json!({ "prompt": prompt }))?;
    v.get("text")
        .and_then(|t| t.as_str())
        .map(str::to_string)
        .ok_or_else(|| EndpointError::Malformed { url: cfg.url.clone(), message: "missing \"text\" string".into() })
}
