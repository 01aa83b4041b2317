//! Run configuration: one JSON file wiring datasets, models, retrieval,
//! caching and outputs.
//!
//! Relative paths are resolved against the config file's directory, so a
//! fixture tree can carry its config along. Secrets never live here: the
//! HTTP backend reads its endpoint and key from the environment.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, GatewayOptions, HttpBackend, LlmParams, MockBackend};
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Fixture-replay backend for offline runs and tests.
    Mock { fixtures: PathBuf },
    /// Live chat-completions/embeddings endpoint; URL and key come from the
    /// environment.
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalSettings {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_half")]
    pub w_question: f64,
    #[serde(default = "default_half")]
    pub w_sql: f64,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            k: default_k(),
            w_question: 0.5,
            w_sql: 0.5,
        }
    }
}

fn default_k() -> usize {
    RetrievalConfig::DEFAULT_K
}
fn default_half() -> f64 {
    0.5
}
fn default_completion_model() -> String {
    "gpt-4".to_string()
}
fn default_embedding_model() -> String {
    "text-embedding-ada-002".to_string()
}
fn default_max_tokens() -> u32 {
    512
}
fn default_parallelism() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_exec_timeout() -> u64 {
    30
}
fn default_kmeans_seed() -> u64 {
    42
}
fn default_kmeans_ks() -> Vec<usize> {
    vec![20, 60, 100]
}
fn default_min_samples() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub dev_path: PathBuf,
    pub tables_path: PathBuf,
    pub db_root: PathBuf,
    #[serde(default)]
    pub variants_root: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,

    pub backend: BackendConfig,
    #[serde(default = "default_completion_model")]
    pub completion_model: String,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,

    #[serde(default)]
    pub retrieval: RetrievalSettings,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_exec_timeout")]
    pub exec_timeout_secs: u64,

    #[serde(default = "default_kmeans_seed")]
    pub kmeans_seed: u64,
    #[serde(default = "default_kmeans_ks")]
    pub kmeans_ks: Vec<usize>,
    #[serde(default)]
    pub kmeans_normalize: bool,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,

    /// Optional replacement for the built-in EPIGen seed examples.
    #[serde(default)]
    pub epigen_seed_path: Option<PathBuf>,
}

impl RunConfig {
    /// Loads and validates a config file; every referenced input path must
    /// exist.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.train_path);
        resolve(&mut self.dev_path);
        resolve(&mut self.tables_path);
        resolve(&mut self.db_root);
        resolve(&mut self.cache_dir);
        resolve(&mut self.output_dir);
        if let Some(v) = &mut self.variants_root {
            resolve(v);
        }
        if let Some(s) = &mut self.epigen_seed_path {
            resolve(s);
        }
        if let BackendConfig::Mock { fixtures } = &mut self.backend {
            resolve(fixtures);
        }
    }

    fn validate(&self) -> Result<()> {
        for (label, path) in [
            ("train_path", &self.train_path),
            ("dev_path", &self.dev_path),
            ("tables_path", &self.tables_path),
            ("db_root", &self.db_root),
        ] {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "{label} does not exist: {}",
                    path.display()
                )));
            }
        }
        if let Some(v) = &self.variants_root {
            if !v.exists() {
                return Err(Error::Config(format!(
                    "variants_root does not exist: {}",
                    v.display()
                )));
            }
        }
        if let BackendConfig::Mock { fixtures } = &self.backend {
            if !fixtures.exists() {
                return Err(Error::Config(format!(
                    "mock fixtures file does not exist: {}",
                    fixtures.display()
                )));
            }
        }
        self.retrieval_config()?;
        Ok(())
    }

    pub fn llm_params(&self) -> LlmParams {
        LlmParams {
            model_id: self.completion_model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn retrieval_config(&self) -> Result<RetrievalConfig> {
        RetrievalConfig::new(
            self.retrieval.k,
            self.retrieval.w_question,
            self.retrieval.w_sql,
        )
    }

    pub fn exec_timeout(&self) -> Duration {
        Duration::from_secs(self.exec_timeout_secs)
    }

    pub fn gateway_options(&self) -> GatewayOptions {
        GatewayOptions {
            embedding_model: self.embedding_model.clone(),
            retries: self.retries,
            backoff: Duration::from_millis(250),
            parallelism: self.parallelism,
        }
    }

    /// Builds the gateway for this config's backend.
    pub fn build_gateway(&self) -> Result<Gateway> {
        let backend: Arc<dyn crate::gateway::Backend> = match &self.backend {
            BackendConfig::Mock { fixtures } => Arc::new(MockBackend::load(fixtures)?),
            BackendConfig::Http => Arc::new(HttpBackend::from_env()?),
        };
        Gateway::new(backend, &self.cache_dir, self.gateway_options())
    }
}
