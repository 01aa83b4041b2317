//! Content-addressed response cache: one JSON file per entry.
//!
//! Entries are keyed by digest and record the request parameters alongside
//! the response, so a cache directory is a complete, auditable record of a
//! run. Writes go through a temp file and rename; interrupted runs leave no
//! partial entries and resume where they stopped.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::key::CacheKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub digest: String,
    /// "completion" or "embedding".
    pub kind: String,
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    /// Full prompt for completions, input text for embeddings.
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_vector: Option<Vec<f64>>,
}

/// Which entries a purge removes.
#[derive(Debug, Clone)]
pub enum PurgeScope {
    All,
    ByModel(String),
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        let path = self.entry_path(key.digest());
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<()> {
        let path = self.entry_path(&entry.digest);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Removes matching entries and returns how many were deleted.
    pub fn purge(&self, scope: &PurgeScope) -> Result<usize> {
        let mut removed = 0;
        let read_dir = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for dirent in read_dir {
            let dirent = dirent.map_err(|e| Error::io(&self.dir, e))?;
            let path = dirent.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let matches = match scope {
                PurgeScope::All => true,
                PurgeScope::ByModel(model) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str::<CacheEntry>(&text)
                        .map(|e| &e.model_id == model)
                        .unwrap_or(false)
                }
            };
            if matches {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}
