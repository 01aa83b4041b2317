//! Chat-completion and embedding backends: live HTTP and fixture-replay mock.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::key::CacheKey;
use super::LlmParams;
use crate::error::{Error, Result};

/// Why a backend call failed; the gateway retries only transient failures.
#[derive(Debug)]
pub enum BackendError {
    /// Transport problem or rate limit; retryable with backoff.
    Transient(String),
    /// Malformed request or response; retrying cannot help.
    Fatal(String),
    /// Mock backend has no fixture for this request.
    MissingFixture,
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transient(m) => write!(f, "transient: {m}"),
            BackendError::Fatal(m) => write!(f, "fatal: {m}"),
            BackendError::MissingFixture => write!(f, "missing fixture"),
        }
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> &'static str;

    fn complete(
        &self,
        prompt: &str,
        params: &LlmParams,
        key: &CacheKey,
    ) -> std::result::Result<String, BackendError>;

    fn embed(
        &self,
        text: &str,
        model_id: &str,
        key: &CacheKey,
    ) -> std::result::Result<Vec<f64>, BackendError>;
}

/// One canned response in a mock fixture file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum MockResponse {
    #[serde(rename = "text")]
    Text(String),
    #[serde(rename = "vector")]
    Vector(Vec<f64>),
}

/// Fixture file format for the mock backend.
///
/// `responses` maps request digests to responses; `script` is an optional
/// ordered queue consumed one entry per call, useful for multi-call
/// scenarios where digests are awkward to precompute. A request with no
/// matching fixture is a hard error, never a silent fallback.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub responses: BTreeMap<String, MockResponse>,
    #[serde(default)]
    pub script: Vec<MockResponse>,
}

pub struct MockBackend {
    responses: BTreeMap<String, MockResponse>,
    script: Mutex<VecDeque<MockResponse>>,
}

impl MockBackend {
    pub fn new(fixtures: MockFixtures) -> Self {
        MockBackend {
            responses: fixtures.responses,
            script: Mutex::new(fixtures.script.into()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fixtures: MockFixtures =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(Self::new(fixtures))
    }

    fn lookup(&self, key: &CacheKey) -> std::result::Result<MockResponse, BackendError> {
        if let Some(front) = self.script.lock().expect("script lock").pop_front() {
            return Ok(front);
        }
        self.responses
            .get(key.digest())
            .cloned()
            .ok_or(BackendError::MissingFixture)
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> &'static str {
        "mock"
    }

    fn complete(
        &self,
        _prompt: &str,
        _params: &LlmParams,
        key: &CacheKey,
    ) -> std::result::Result<String, BackendError> {
        match self.lookup(key)? {
            MockResponse::Text(t) => Ok(t),
            MockResponse::Vector(_) => Err(BackendError::Fatal(
                "fixture for this digest is an embedding, not a completion".into(),
            )),
        }
    }

    fn embed(
        &self,
        _text: &str,
        _model_id: &str,
        key: &CacheKey,
    ) -> std::result::Result<Vec<f64>, BackendError> {
        match self.lookup(key)? {
            MockResponse::Vector(v) => Ok(v),
            MockResponse::Text(_) => Err(BackendError::Fatal(
                "fixture for this digest is a completion, not an embedding".into(),
            )),
        }
    }
}

/// Environment variable naming the endpoint base URL
/// (e.g. `https://api.openai.com/v1`).
pub const API_BASE_ENV: &str = "EPI_SQL_API_BASE";
/// Environment variable holding the API key. Secrets come only from the
/// environment, never from config files.
pub const API_KEY_ENV: &str = "EPI_SQL_API_KEY";

/// Client for the prevalent chat-completions / embeddings JSON wire format.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn from_env() -> Result<Self> {
        let base_url = std::env::var(API_BASE_ENV)
            .map_err(|_| Error::Config(format!("{API_BASE_ENV} is not set")))?;
        let api_key = std::env::var(API_KEY_ENV).ok();
        Self::new(base_url, api_key)
    }

    pub fn new(base_url: String, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        })
    }

    fn post(
        &self,
        path: &str,
        body: serde_json::Value,
    ) -> std::result::Result<serde_json::Value, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("{status}: {text}")));
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> &'static str {
        "http"
    }

    fn complete(
        &self,
        prompt: &str,
        params: &LlmParams,
        _key: &CacheKey,
    ) -> std::result::Result<String, BackendError> {
        let body = serde_json::json!({
            "model": params.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        });
        let resp = self.post("/chat/completions", body)?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }

    fn embed(
        &self,
        text: &str,
        model_id: &str,
        _key: &CacheKey,
    ) -> std::result::Result<Vec<f64>, BackendError> {
        let body = serde_json::json!({"model": model_id, "input": text});
        let resp = self.post("/embeddings", body)?;
        resp["data"][0]["embedding"]
            .as_array()
            .map(|vals| vals.iter().filter_map(|v| v.as_f64()).collect::<Vec<f64>>())
            .filter(|v: &Vec<f64>| !v.is_empty())
            .ok_or_else(|| BackendError::Fatal("response has no data[0].embedding".into()))
    }
}
