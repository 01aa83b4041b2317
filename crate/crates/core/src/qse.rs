//! QSESet construction: collect error-prone instances on the training split,
//! generate an error-prevention instruction per failure, verify each
//! instruction actually fixes its instance, and persist the verified
//! (question, erroneous SQL, EPI) triples with embeddings.
//!
//! Verification keeps an EPI only when re-running the failing instance with
//! the instruction in the SQL-generation prompt now execution-matches the
//! gold query; one attempt per EPI, failures are dropped. The persisted
//! store is deterministic given the response cache: work items run in
//! parallel but results are buffered and written in split order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, ExecStatus};
use crate::gateway::{Gateway, LlmParams};
use crate::prompt::{self, Demonstration, EpigenSeed};
use crate::runlog::{self as rl, RunLog, RunLogRecord};
use crate::spider::{SchemaCatalog, TaskInstance};

/// Shared handles threaded through the pipeline stages.
pub struct PipelineCtx<'a> {
    pub gateway: &'a Gateway,
    pub params: &'a LlmParams,
    pub catalog: &'a SchemaCatalog,
    pub seed: &'a EpigenSeed,
    pub exec_timeout: Duration,
}

/// How the zero-shot draft failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// The draft did not execute (or was not extractable SQL).
    ExecutionError,
    /// The draft ran but its result differs from gold.
    ResultMismatch,
}

/// A training instance whose zero-shot draft failed execution matching.
#[derive(Debug, Clone)]
pub struct ErrorInstance {
    pub task: TaskInstance,
    pub draft_sql: String,
    pub failure_kind: FailureKind,
}

/// Artifact row for the collected-errors store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub task_id: String,
    pub db_id: String,
    pub question: String,
    pub gold_sql: String,
    pub draft_sql: String,
    pub failure_kind: FailureKind,
}

impl From<&ErrorInstance> for ErrorRecord {
    fn from(err: &ErrorInstance) -> Self {
        ErrorRecord {
            task_id: err.task.id.clone(),
            db_id: err.task.db_id.clone(),
            question: err.task.question.clone(),
            gold_sql: err.task.gold_sql.clone().unwrap_or_default(),
            draft_sql: err.draft_sql.clone(),
            failure_kind: err.failure_kind,
        }
    }
}

fn default_true() -> bool {
    true
}

/// One verified (question, erroneous SQL, EPI) triple with cached
/// embeddings; the unit of the QSESet store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QseEntry {
    pub question: String,
    pub erroneous_sql: String,
    pub epi: String,
    pub question_embedding: Vec<f64>,
    pub sql_embedding: Vec<f64>,
    pub source_id: String,
    /// Always true for persisted entries; not stored.
    #[serde(skip_serializing, default = "default_true")]
    pub verified: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CollectSummary {
    pub total: usize,
    pub collected: usize,
    pub skipped: usize,
    pub data_errors: usize,
}

enum CollectOutcome {
    Correct,
    Collected(Box<ErrorInstance>),
    Skipped(String),
    DataError(String),
}

fn collect_one(task: &TaskInstance, ctx: &PipelineCtx) -> Result<CollectOutcome> {
    let gold = task.gold()?;
    let schema = ctx.catalog.schema(&task.db_id)?;
    let ddl = crate::spider::render_schema(schema);
    let zero_shot = prompt::build_zero_shot(&ddl, &task.question)?;

    let response = match ctx.gateway.complete(&zero_shot, ctx.params) {
        Ok(r) => r,
        Err(Error::Gateway { reason, .. }) => return Ok(CollectOutcome::Skipped(reason)),
        Err(e) => return Err(e),
    };

    // A response with no extractable SQL is itself an error-prone instance;
    // keep the raw text as the erroneous SQL so EPIGen can describe it.
    let (draft, extractable) = match prompt::extract_sql(&response) {
        Ok(sql) => (sql, true),
        Err(_) => {
            let raw = response.trim().to_string();
            if raw.is_empty() {
                return Ok(CollectOutcome::Skipped("empty response".into()));
            }
            (raw, false)
        }
    };

    let gold_result = eval::execute(&task.db_id, gold, ctx.catalog, ctx.exec_timeout)?;
    if gold_result.status != ExecStatus::Ok {
        return Ok(CollectOutcome::DataError(
            gold_result.error.unwrap_or_else(|| "gold failed".into()),
        ));
    }
    if !extractable {
        return Ok(CollectOutcome::Collected(Box::new(ErrorInstance {
            task: task.clone(),
            draft_sql: draft,
            failure_kind: FailureKind::ExecutionError,
        })));
    }
    let draft_result = eval::execute(&task.db_id, &draft, ctx.catalog, ctx.exec_timeout)?;
    if draft_result.status != ExecStatus::Ok {
        return Ok(CollectOutcome::Collected(Box::new(ErrorInstance {
            task: task.clone(),
            draft_sql: draft,
            failure_kind: FailureKind::ExecutionError,
        })));
    }
    if eval::results_match(&gold_result, &draft_result) {
        Ok(CollectOutcome::Correct)
    } else {
        Ok(CollectOutcome::Collected(Box::new(ErrorInstance {
            task: task.clone(),
            draft_sql: draft,
            failure_kind: FailureKind::ResultMismatch,
        })))
    }
}

/// Runs the zero-shot pass over a labeled split and returns the instances
/// whose drafts fail execution matching, in split order.
///
/// Gateway failures skip the instance (the pass is resumable through the
/// cache); gold queries that fail to execute are data errors and are
/// excluded rather than collected.
pub fn collect_errors(
    split: &[TaskInstance],
    ctx: &PipelineCtx,
    runlog: &mut RunLog,
) -> Result<(Vec<ErrorInstance>, CollectSummary)> {
    let outcomes: Vec<CollectOutcome> = split
        .par_iter()
        .map(|task| collect_one(task, ctx))
        .collect::<Result<_>>()?;

    let mut errors = Vec::new();
    let mut summary = CollectSummary {
        total: split.len(),
        ..Default::default()
    };
    for (task, outcome) in split.iter().zip(outcomes) {
        match outcome {
            CollectOutcome::Correct => {
                runlog.log(&RunLogRecord::new(
                    &task.id,
                    rl::STAGE_COLLECT,
                    rl::OUTCOME_CORRECT,
                ));
            }
            CollectOutcome::Collected(err) => {
                summary.collected += 1;
                runlog.log(
                    &RunLogRecord::new(&task.id, rl::STAGE_COLLECT, rl::OUTCOME_ERROR)
                        .with_detail(err.draft_sql.clone()),
                );
                errors.push(*err);
            }
            CollectOutcome::Skipped(reason) => {
                summary.skipped += 1;
                runlog.log(
                    &RunLogRecord::new(&task.id, rl::STAGE_COLLECT, rl::OUTCOME_SKIPPED)
                        .with_detail(reason),
                );
            }
            CollectOutcome::DataError(reason) => {
                summary.data_errors += 1;
                runlog.log(
                    &RunLogRecord::new(&task.id, rl::STAGE_COLLECT, rl::OUTCOME_DATA_ERROR)
                        .with_detail(reason),
                );
            }
        }
    }
    Ok((errors, summary))
}

/// Asks the model for an error-prevention instruction for one failure.
pub fn generate_epi(err: &ErrorInstance, ctx: &PipelineCtx) -> Result<String> {
    let gold = err.task.gold()?;
    let epigen = prompt::build_epigen(ctx.seed, &err.task.question, gold, &err.draft_sql)?;
    let response = ctx.gateway.complete(&epigen, ctx.params)?;
    let epi = prompt::extract_epi(&response).map_err(|_| Error::EmptyResponse {
        context: format!("EPI generation for {}", err.task.id),
    })?;
    Ok(epi)
}

/// Re-runs the failing instance with the candidate EPI in the
/// SQL-generation prompt and reports whether the output now
/// execution-matches gold. Execution failure of the new SQL is a plain
/// `false`, not an error.
pub fn verify_epi(err: &ErrorInstance, epi: &str, ctx: &PipelineCtx) -> Result<bool> {
    let gold = err.task.gold()?;
    let schema = ctx.catalog.schema(&err.task.db_id)?;
    let ddl = crate::spider::render_schema(schema);
    let sqlgen = prompt::build_sqlgen_epi(&ddl, &err.task.question, epi)?;
    let response = ctx.gateway.complete(&sqlgen, ctx.params)?;
    let guided = match prompt::extract_sql(&response) {
        Ok(sql) => sql,
        Err(_) => return Ok(false),
    };
    let gold_result = eval::execute(&err.task.db_id, gold, ctx.catalog, ctx.exec_timeout)?;
    if gold_result.status != ExecStatus::Ok {
        return Err(Error::GoldExecution {
            db_id: err.task.db_id.clone(),
            reason: gold_result.error.unwrap_or_default(),
        });
    }
    let guided_result = eval::execute(&err.task.db_id, &guided, ctx.catalog, ctx.exec_timeout)?;
    Ok(eval::results_match(&gold_result, &guided_result))
}

/// Per-stage counts of one QSESet build. The funnel is monotone:
/// `persisted <= verified <= generated <= collected <= total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QseSummary {
    pub total: usize,
    pub collected: usize,
    pub generated: usize,
    pub verified: usize,
    pub persisted: usize,
    pub skipped: usize,
    pub data_errors: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QseBuildOptions {
    /// Skip EPI-verification and persist every generated EPI (the
    /// verification ablation). The summary's `verified` stays at zero.
    pub skip_verification: bool,
}

enum EpiOutcome {
    Generated { epi: String, verified: bool },
    GenerationFailed(String),
}

/// Full stage 1-2 pass: collect, generate, verify, embed, persist.
///
/// Only verified triples are embedded and appended to the JSON-lines store
/// at `out_path`; exact duplicate (question, EPI) pairs are dropped to keep
/// retrieval diversity. Lines are flushed as written, so an aborted run
/// leaves a store that is valid up to its last complete line.
pub fn build_qseset(
    split: &[TaskInstance],
    ctx: &PipelineCtx,
    options: &QseBuildOptions,
    out_path: &Path,
    runlog: &mut RunLog,
) -> Result<QseSummary> {
    let (errors, collect_summary) = collect_errors(split, ctx, runlog)?;
    let mut summary = QseSummary {
        total: collect_summary.total,
        collected: collect_summary.collected,
        skipped: collect_summary.skipped,
        data_errors: collect_summary.data_errors,
        ..Default::default()
    };

    let outcomes: Vec<EpiOutcome> = errors
        .par_iter()
        .map(|err| -> Result<EpiOutcome> {
            let epi = match generate_epi(err, ctx) {
                Ok(epi) => epi,
                Err(Error::EmptyResponse { .. }) => {
                    return Ok(EpiOutcome::GenerationFailed("empty response".into()))
                }
                Err(Error::Gateway { reason, .. }) => {
                    return Ok(EpiOutcome::GenerationFailed(reason))
                }
                Err(e) => return Err(e),
            };
            let verified = if options.skip_verification {
                false
            } else {
                verify_epi(err, &epi, ctx)?
            };
            Ok(EpiOutcome::Generated { epi, verified })
        })
        .collect::<Result<_>>()?;

    let file = File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut writer = BufWriter::new(file);
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (err, outcome) in errors.iter().zip(outcomes) {
        let task_id = &err.task.id;
        let (epi, verified) = match outcome {
            EpiOutcome::GenerationFailed(reason) => {
                runlog.log(
                    &RunLogRecord::new(task_id, rl::STAGE_EPIGEN, "generation-failed")
                        .with_detail(reason),
                );
                continue;
            }
            EpiOutcome::Generated { epi, verified } => (epi, verified),
        };
        summary.generated += 1;
        runlog.log(&RunLogRecord::new(task_id, rl::STAGE_EPIGEN, "generated"));

        if !options.skip_verification {
            if !verified {
                runlog.log(&RunLogRecord::new(task_id, rl::STAGE_VERIFY, "rejected"));
                continue;
            }
            summary.verified += 1;
            runlog.log(&RunLogRecord::new(task_id, rl::STAGE_VERIFY, "verified"));
        }

        // The EPI must be usable as a retrieval demonstration later.
        if Demonstration::new(&err.task.question, &epi).is_err() {
            runlog.log(
                &RunLogRecord::new(task_id, rl::STAGE_PERSIST, "rejected")
                    .with_detail("EPI not usable as a demonstration"),
            );
            continue;
        }
        if !seen.insert((err.task.question.clone(), epi.clone())) {
            runlog.log(&RunLogRecord::new(
                task_id,
                rl::STAGE_PERSIST,
                "deduplicated",
            ));
            continue;
        }

        let question_embedding = ctx.gateway.embed(&err.task.question)?.into_vec();
        let sql_embedding = ctx.gateway.embed(&err.draft_sql)?.into_vec();
        let entry = QseEntry {
            question: err.task.question.clone(),
            erroneous_sql: err.draft_sql.clone(),
            epi,
            question_embedding,
            sql_embedding,
            source_id: task_id.clone(),
            verified: true,
        };
        serde_json::to_writer(&mut writer, &entry).map_err(|e| Error::json(out_path, e))?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io(out_path, e))?;
        writer.flush().map_err(|e| Error::io(out_path, e))?;
        summary.persisted += 1;
        runlog.log(&RunLogRecord::new(task_id, rl::STAGE_PERSIST, "persisted"));
    }

    writer
        .into_inner()
        .map_err(|e| Error::io(out_path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(out_path, e))?;
    Ok(summary)
}

/// Loads a QSESet store, validating that entries are complete and that all
/// embeddings share one dimension.
pub fn load_qseset(path: &Path) -> Result<Vec<QseEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<QseEntry> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            index: lineno,
            reason,
        };
        let entry: QseEntry = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if entry.question.is_empty() || entry.epi.is_empty() || entry.erroneous_sql.is_empty() {
            return Err(bad("empty field".into()));
        }
        for values in [&entry.question_embedding, &entry.sql_embedding] {
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(bad("missing or non-finite embedding".into()));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(bad(format!(
                        "embedding dimension {} differs from store dimension {d}",
                        values.len()
                    )))
                }
                Some(_) => {}
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes the collected-errors artifact, one JSON record per line.
pub fn write_error_records(errors: &[ErrorInstance], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for err in errors {
        serde_json::to_writer(&mut writer, &ErrorRecord::from(err))
            .map_err(|e| Error::json(path, e))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
