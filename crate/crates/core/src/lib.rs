//! Core library for the EPI-SQL pipeline.
//!
//! EPI-SQL improves zero-shot Text-to-SQL with LLMs by learning from the
//! model's own failures. The pipeline has four stages:
//!
//! 1. **Collect** — run zero-shot SQL generation over a training split and
//!    keep the instances whose predictions do not execution-match the gold
//!    query ([`qse::collect_errors`]).
//! 2. **Build QSESet** — for each failure, prompt the model for an
//!    error-prevention instruction (EPI), keep only EPIs that actually fix
//!    the failing instance, and persist the verified (question, erroneous
//!    SQL, EPI) triples with embeddings ([`qse::build_qseset`]).
//! 3. **Infer** — per evaluation task: draft a zero-shot SQL, retrieve the
//!    most similar QSESet entries by combined question/SQL cosine
//!    similarity, ask the model for a task-specific EPI, and generate the
//!    final SQL with that EPI in the prompt ([`inference::run_pipeline`]).
//! 4. **Evaluate / analyze** — execution accuracy and test-suite accuracy
//!    with difficulty buckets ([`eval`]), plus k-means error-bias reports
//!    over question embeddings ([`bias`]).

pub mod bias;
pub mod config;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod inference;
pub mod prompt;
pub mod qse;
pub mod retrieval;
pub mod runlog;
pub mod spider;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use gateway::{EmbeddingVector, Gateway, LlmParams};
pub use spider::{DatabaseSchema, SchemaCatalog, TaskInstance};

/// Writes a whole artifact through a temp file and rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let tmp = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => path.with_extension(format!("{ext}.tmp")),
        None => path.with_extension("tmp"),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}
