//! Per-task inference: draft a zero-shot SQL, retrieve similar QSESet
//! entries, synthesize a task-specific EPI, and generate the final SQL with
//! the EPI in the prompt.
//!
//! The draft only drives retrieval; its embedding and the question's
//! embedding are scored against each entry's stored embeddings. The
//! contextualized EPI replaces the retrieved general EPIs, it is never
//! concatenated with them. When the QSESet is empty (or EPIs are disabled),
//! the pipeline degrades to its own zero-shot baseline: the draft becomes
//! the final SQL.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::CacheKey;
use crate::prompt::{self, Demonstration};
use crate::qse::{PipelineCtx, QseEntry};
use crate::retrieval::{self, RetrievalConfig};
use crate::runlog::{self as rl, RunLog, RunLogRecord};
use crate::spider::TaskInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    Epi,
    ZeroShotFallback,
}

/// Cache keys of the model calls behind one prediction; all three resolve in
/// the cache for EPI-mode predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDigests {
    pub draft: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epi_context: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_sql: Option<String>,
}

/// Everything the pipeline produced for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub task_id: String,
    pub draft_sql: String,
    /// Retrieved demonstrations in retrieval order; empty in fallback mode.
    pub demonstrations: Vec<Demonstration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contextual_epi: Option<String>,
    pub final_sql: String,
    pub mode: PredictionMode,
    pub prompt_digests: PromptDigests,
}

/// Zero-shot draft for one task: prompt, completion, extraction. Returns the
/// SQL and the completion's cache key digest.
pub fn draft_sql(task: &TaskInstance, ctx: &PipelineCtx) -> Result<(String, String)> {
    let schema = ctx.catalog.schema(&task.db_id)?;
    let ddl = crate::spider::render_schema(schema);
    let zero_shot = prompt::build_zero_shot(&ddl, &task.question)?;
    let digest = CacheKey::completion(ctx.params, &zero_shot)
        .digest()
        .to_string();
    let response = ctx.gateway.complete(&zero_shot, ctx.params)?;
    Ok((prompt::extract_sql(&response)?, digest))
}

/// Task-specific EPI from retrieved demonstrations. Returns the EPI, the
/// demonstrations used (in retrieval order), and the completion digest.
pub fn contextual_epi(
    task: &TaskInstance,
    draft: &str,
    qseset: &[QseEntry],
    cfg: &RetrievalConfig,
    ctx: &PipelineCtx,
) -> Result<(String, Vec<Demonstration>, String)> {
    if qseset.is_empty() {
        return Err(Error::Config("empty QSESet: caller must fall back".into()));
    }
    let q_emb = ctx.gateway.embed(&task.question)?;
    let s_emb = ctx.gateway.embed(draft)?;
    let top = retrieval::top_k(q_emb.as_slice(), s_emb.as_slice(), qseset, cfg)?;
    let demos: Vec<Demonstration> = top
        .iter()
        .map(|scored| Demonstration::new(&scored.entry.question, &scored.entry.epi))
        .collect::<Result<_>>()?;
    let context_prompt = prompt::build_epi_context(&demos, &task.question)?;
    let digest = CacheKey::completion(ctx.params, &context_prompt)
        .digest()
        .to_string();
    let response = ctx.gateway.complete(&context_prompt, ctx.params)?;
    let epi = prompt::extract_epi(&response)?;
    Ok((epi, demos, digest))
}

/// Final SQL with the EPI in the prompt. Returns the SQL and the completion
/// digest.
pub fn final_sql(task: &TaskInstance, epi: &str, ctx: &PipelineCtx) -> Result<(String, String)> {
    let schema = ctx.catalog.schema(&task.db_id)?;
    let ddl = crate::spider::render_schema(schema);
    let sqlgen = prompt::build_sqlgen_epi(&ddl, &task.question, epi)?;
    let digest = CacheKey::completion(ctx.params, &sqlgen)
        .digest()
        .to_string();
    let response = ctx.gateway.complete(&sqlgen, ctx.params)?;
    Ok((prompt::extract_sql(&response)?, digest))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InferenceOptions {
    pub retrieval: RetrievalConfig,
    /// Skip retrieval and EPI generation entirely; every prediction is the
    /// zero-shot draft (the no-EPI ablation).
    pub disable_epi: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InferSummary {
    pub total: usize,
    pub predicted: usize,
    pub fallback: usize,
    pub task_errors: usize,
}

/// Runs one task through draft, retrieval, contextual EPI, and final SQL.
pub fn predict_task(
    task: &TaskInstance,
    qseset: &[QseEntry],
    options: &InferenceOptions,
    ctx: &PipelineCtx,
) -> Result<Prediction> {
    let (draft, draft_digest) = draft_sql(task, ctx)?;
    if options.disable_epi || qseset.is_empty() {
        return Ok(Prediction {
            task_id: task.id.clone(),
            draft_sql: draft.clone(),
            demonstrations: Vec::new(),
            contextual_epi: None,
            final_sql: draft,
            mode: PredictionMode::ZeroShotFallback,
            prompt_digests: PromptDigests {
                draft: draft_digest,
                epi_context: None,
                final_sql: None,
            },
        });
    }
    let (epi, demos, epi_digest) = contextual_epi(task, &draft, qseset, &options.retrieval, ctx)?;
    let (final_text, final_digest) = final_sql(task, &epi, ctx)?;
    Ok(Prediction {
        task_id: task.id.clone(),
        draft_sql: draft,
        demonstrations: demos,
        contextual_epi: Some(epi),
        final_sql: final_text,
        mode: PredictionMode::Epi,
        prompt_digests: PromptDigests {
            draft: draft_digest,
            epi_context: Some(epi_digest),
            final_sql: Some(final_digest),
        },
    })
}

/// Full inference pass over a split, persisted in split order.
///
/// Per-task failures (extraction, transport) are recorded in the run log
/// and the task is skipped; the pass continues. Writes the JSON-lines
/// prediction store and a plain-text file of final SQLs, one per line, in
/// split order.
pub fn run_pipeline(
    split: &[TaskInstance],
    qseset: &[QseEntry],
    options: &InferenceOptions,
    ctx: &PipelineCtx,
    out_jsonl: &Path,
    out_txt: &Path,
    runlog: &mut RunLog,
) -> Result<(Vec<Prediction>, InferSummary)> {
    let results: Vec<std::result::Result<Prediction, String>> = split
        .par_iter()
        .map(|task| match predict_task(task, qseset, options, ctx) {
            Ok(p) => Ok(Ok(p)),
            // Soft, per-task failures; anything else aborts the run.
            Err(Error::Extraction { snippet }) => Ok(Err(format!("extraction: {snippet}"))),
            Err(Error::EmptyResponse { context }) => Ok(Err(format!("empty response: {context}"))),
            Err(Error::Gateway { reason, .. }) => Ok(Err(format!("gateway: {reason}"))),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let mut predictions = Vec::with_capacity(split.len());
    let mut summary = InferSummary {
        total: split.len(),
        ..Default::default()
    };
    for (task, result) in split.iter().zip(results) {
        match result {
            Ok(prediction) => {
                summary.predicted += 1;
                if prediction.mode == PredictionMode::ZeroShotFallback {
                    summary.fallback += 1;
                }
                runlog.log(&RunLogRecord::new(&task.id, rl::STAGE_INFER, "predicted"));
                predictions.push(prediction);
            }
            Err(reason) => {
                summary.task_errors += 1;
                runlog.log(
                    &RunLogRecord::new(&task.id, rl::STAGE_INFER, "task-error").with_detail(reason),
                );
            }
        }
    }

    write_predictions(&predictions, out_jsonl, out_txt)?;
    Ok((predictions, summary))
}

/// Writes the prediction store and the plain final-SQL file, atomically via
/// temp file and rename.
pub fn write_predictions(predictions: &[Prediction], jsonl: &Path, txt: &Path) -> Result<()> {
    let mut store = Vec::new();
    for p in predictions {
        serde_json::to_writer(&mut store, p).map_err(|e| Error::json(jsonl, e))?;
        store.push(b'\n');
    }
    crate::write_atomic(jsonl, &store)?;

    let mut lines = String::new();
    for p in predictions {
        // One line per task, the downstream evaluator convention.
        lines.push_str(&p.final_sql.replace('\n', " "));
        lines.push('\n');
    }
    crate::write_atomic(txt, lines.as_bytes())
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut predictions = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            index: lineno,
            reason: e.to_string(),
        })?;
        if p.final_sql.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                index: lineno,
                reason: "empty final_sql".into(),
            });
        }
        if p.mode == PredictionMode::Epi
            && (p.contextual_epi.is_none() || p.demonstrations.is_empty())
        {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                index: lineno,
                reason: "EPI-mode prediction without EPI or demonstrations".into(),
            });
        }
        predictions.push(p);
    }
    Ok(predictions)
}
