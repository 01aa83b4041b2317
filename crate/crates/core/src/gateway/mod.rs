//! Uniform interface to chat-completion and embedding backends with
//! deterministic request caching.
//!
//! Every request is content-addressed by [`CacheKey`]; responses are
//! persisted to a per-entry file cache before they are returned, so
//! interrupted batch runs resume for free and a warm cache replays a run
//! without touching the backend at all. The gateway is safe for concurrent
//! use: in-flight de-duplication guarantees at most one backend call per
//! cache key at a time, and a configurable parallelism bound caps
//! simultaneous backend requests.

mod backend;
mod cache;
mod key;

pub use backend::{
    Backend, BackendError, HttpBackend, MockBackend, MockFixtures, MockResponse, API_BASE_ENV,
    API_KEY_ENV,
};
pub use cache::{CacheEntry, PurgeScope, ResponseCache};
pub use key::CacheKey;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling parameters for completion requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub model_id: String,
    /// Decoding temperature; 0 for greedy, stable output.
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl LlmParams {
    pub fn new(model_id: impl Into<String>) -> Self {
        LlmParams {
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

/// A fixed-length embedding with all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Embedding("empty embedding vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Embedding(format!("non-finite entry {bad}")));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Gateway knobs beyond the per-request sampling parameters.
#[derive(Debug, Clone)]
pub struct GatewayOptions {
    /// Model used by [`Gateway::embed`].
    pub embedding_model: String,
    /// Retries after the first attempt, transient failures only.
    pub retries: u32,
    /// Base delay for exponential backoff between retries.
    pub backoff: Duration,
    /// Maximum simultaneous backend requests.
    pub parallelism: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            embedding_model: "text-embedding-ada-002".to_string(),
            retries: 3,
            backoff: Duration::from_millis(250),
            parallelism: 4,
        }
    }
}

/// Counting semaphore bounding simultaneous backend calls.
struct Limiter {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter {
            max: max.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterPermit<'_> {
        let mut in_use = self.in_use.lock().expect("limiter lock");
        while *in_use >= self.max {
            in_use = self.freed.wait(in_use).expect("limiter wait");
        }
        *in_use += 1;
        LimiterPermit { limiter: self }
    }
}

struct LimiterPermit<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterPermit<'_> {
    fn drop(&mut self) {
        let mut in_use = self.limiter.in_use.lock().expect("limiter lock");
        *in_use -= 1;
        self.limiter.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: ResponseCache,
    options: GatewayOptions,
    limiter: Limiter,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    embed_dim: Mutex<Option<usize>>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn Backend>,
        cache_dir: &Path,
        options: GatewayOptions,
    ) -> Result<Self> {
        let cache = ResponseCache::open(cache_dir)?;
        let limiter = Limiter::new(options.parallelism);
        Ok(Gateway {
            backend,
            cache,
            options,
            limiter,
            inflight: Mutex::new(HashMap::new()),
            embed_dim: Mutex::new(None),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    /// Backend invocations so far (attempts, including retries). Zero on a
    /// fully warm cache.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn embedding_model(&self) -> &str {
        &self.options.embedding_model
    }

    /// Sends a completion request, serving and populating the cache.
    pub fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String> {
        if prompt.is_empty() {
            return Err(Error::Config("empty prompt".into()));
        }
        let key = CacheKey::completion(params, prompt);
        if let Some(text) = self.cached_completion(&key)? {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(text);
        }

        let slot = self.inflight_slot(&key);
        let _guard = slot.lock().expect("inflight lock");
        let outcome = (|| {
            // Another thread may have populated the cache while we waited.
            if let Some(text) = self.cached_completion(&key)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(text);
            }
            let text =
                self.call_with_retry(&key, || self.backend.complete(prompt, params, &key))?;
            self.cache.put(&CacheEntry {
                digest: key.digest().to_string(),
                kind: "completion".to_string(),
                model_id: params.model_id.clone(),
                temperature: Some(params.temperature),
                max_output_tokens: Some(params.max_output_tokens),
                prompt: prompt.to_string(),
                response_text: Some(text.clone()),
                response_vector: None,
            })?;
            Ok(text)
        })();
        self.release_slot(&key);
        outcome
    }

    /// Embeds a text with the configured embedding model, cached like
    /// completions. The vector dimension is pinned by the first embedding
    /// seen in a run; a later mismatch is a configuration error.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::Config("empty embedding input".into()));
        }
        let model_id = self.options.embedding_model.clone();
        let key = CacheKey::embedding(&model_id, text);
        if let Some(entry) = self.cache.get(&key)? {
            let values = entry
                .response_vector
                .ok_or_else(|| Error::Config(format!("cache entry {key} has no vector")))?;
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return self.finish_embedding(values);
        }

        let slot = self.inflight_slot(&key);
        let _guard = slot.lock().expect("inflight lock");
        let outcome = (|| {
            if let Some(entry) = self.cache.get(&key)? {
                if let Some(values) = entry.response_vector {
                    self.cache_hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(values);
                }
            }
            let values =
                self.call_with_retry(&key, || self.backend.embed(text, &model_id, &key))?;
            self.cache.put(&CacheEntry {
                digest: key.digest().to_string(),
                kind: "embedding".to_string(),
                model_id: model_id.clone(),
                temperature: None,
                max_output_tokens: None,
                prompt: text.to_string(),
                response_text: None,
                response_vector: Some(values.clone()),
            })?;
            Ok(values)
        })();
        self.release_slot(&key);
        self.finish_embedding(outcome?)
    }

    pub fn purge_cache(&self, scope: &PurgeScope) -> Result<usize> {
        self.cache.purge(scope)
    }

    fn finish_embedding(&self, values: Vec<f64>) -> Result<EmbeddingVector> {
        let vector = EmbeddingVector::new(values)?;
        let mut dim = self.embed_dim.lock().expect("dim lock");
        match *dim {
            None => *dim = Some(vector.dim()),
            Some(expected) if expected != vector.dim() => {
                return Err(Error::Config(format!(
                    "embedding dimension changed: expected {expected}, got {}",
                    vector.dim()
                )));
            }
            Some(_) => {}
        }
        Ok(vector)
    }

    fn cached_completion(&self, key: &CacheKey) -> Result<Option<String>> {
        match self.cache.get(key)? {
            Some(entry) => entry
                .response_text
                .ok_or_else(|| Error::Config(format!("cache entry {key} has no text")))
                .map(Some),
            None => Ok(None),
        }
    }

    fn inflight_slot(&self, key: &CacheKey) -> Arc<Mutex<()>> {
        let mut map = self.inflight.lock().expect("inflight map lock");
        map.entry(key.digest().to_string())
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }

    fn release_slot(&self, key: &CacheKey) {
        let mut map = self.inflight.lock().expect("inflight map lock");
        map.remove(key.digest());
    }

    fn call_with_retry<T>(
        &self,
        key: &CacheKey,
        mut call: impl FnMut() -> std::result::Result<T, BackendError>,
    ) -> Result<T> {
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match call() {
                Ok(value) => return Ok(value),
                Err(BackendError::MissingFixture) => {
                    return Err(Error::MissingFixture {
                        digest: key.digest().to_string(),
                    });
                }
                Err(BackendError::Fatal(reason)) => {
                    return Err(Error::Gateway {
                        digest: key.digest().to_string(),
                        reason,
                    });
                }
                Err(BackendError::Transient(reason)) => {
                    if attempt >= self.options.retries {
                        return Err(Error::Gateway {
                            digest: key.digest().to_string(),
                            reason: format!("{reason} (after {attempt} retries)"),
                        });
                    }
                    std::thread::sleep(self.options.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
            }
        }
    }
}
