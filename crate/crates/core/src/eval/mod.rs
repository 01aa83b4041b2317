//! Execution-based scoring: execution accuracy (EX), test-suite accuracy
//! over database variants (TS), difficulty bucketing, and report
//! aggregation.
//!
//! A prediction execution-matches the gold query when both run successfully
//! and produce the same result: compared as ordered sequences when the gold
//! query has a top-level ORDER BY, as multisets otherwise. Values unify
//! integer-valued reals with integers; text compares exactly; NULL equals
//! only NULL.

mod difficulty;
pub(crate) mod sqlscan;

pub use difficulty::{
    classify_difficulty, classify_difficulty_checked, sql_components, Difficulty, SqlComponents,
};
pub use sqlscan::has_top_level_order_by;

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spider::{SchemaCatalog, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecStatus {
    Ok,
    SqlError,
    Timeout,
}

/// One cell of a result row.
#[derive(Debug, Clone, PartialEq)]
pub enum SqlValue {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

/// Outcome of executing one statement read-only.
#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    /// Present iff status is Ok; a multiset unless `ordered`.
    pub rows: Vec<Vec<SqlValue>>,
    /// The executed statement has a top-level ORDER BY.
    pub ordered: bool,
    /// Engine message for SqlError.
    pub error: Option<String>,
}

pub const DEFAULT_EXEC_TIMEOUT: Duration = Duration::from_secs(30);

/// Runs `sql` read-only against a database file.
///
/// Engine errors become `SqlError`, exceeding the timeout becomes `Timeout`;
/// a missing database file is a hard error.
pub fn execute_path(db_path: &Path, sql: &str, timeout: Duration) -> Result<ExecutionResult> {
    if !db_path.is_file() {
        return Err(Error::io(
            db_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "database file not found"),
        ));
    }
    let conn = Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| Error::Sqlite {
        db_id: db_path.display().to_string(),
        reason: e.to_string(),
    })?;

    let deadline = Instant::now() + timeout;
    conn.progress_handler(2_000, Some(move || Instant::now() >= deadline));

    let ordered = sqlscan::has_top_level_order_by(sql);
    let sql_error = |e: rusqlite::Error| ExecutionResult {
        status: if Instant::now() >= deadline {
            ExecStatus::Timeout
        } else {
            ExecStatus::SqlError
        },
        rows: Vec::new(),
        ordered,
        error: Some(e.to_string()),
    };

    let mut stmt = match conn.prepare(sql) {
        Ok(stmt) => stmt,
        Err(e) => return Ok(sql_error(e)),
    };
    let ncols = stmt.column_count();
    let mut rows = Vec::new();
    let mut cursor = match stmt.query([]) {
        Ok(rows) => rows,
        Err(e) => return Ok(sql_error(e)),
    };
    loop {
        match cursor.next() {
            Ok(Some(row)) => {
                let mut tuple = Vec::with_capacity(ncols);
                for i in 0..ncols {
                    let value = match row.get_ref(i) {
                        Ok(v) => v,
                        Err(e) => return Ok(sql_error(e)),
                    };
                    tuple.push(match value {
                        ValueRef::Null => SqlValue::Null,
                        ValueRef::Integer(v) => SqlValue::Int(v),
                        ValueRef::Real(v) => SqlValue::Real(v),
                        ValueRef::Text(t) => {
                            SqlValue::Text(String::from_utf8_lossy(t).into_owned())
                        }
                        ValueRef::Blob(b) => SqlValue::Blob(b.to_vec()),
                    });
                }
                rows.push(tuple);
            }
            Ok(None) => break,
            Err(e) => return Ok(sql_error(e)),
        }
    }
    Ok(ExecutionResult {
        status: ExecStatus::Ok,
        rows,
        ordered,
        error: None,
    })
}

/// [`execute_path`] resolved through the catalog's database layout.
pub fn execute(
    db_id: &str,
    sql: &str,
    catalog: &SchemaCatalog,
    timeout: Duration,
) -> Result<ExecutionResult> {
    execute_path(&catalog.db_path(db_id), sql, timeout)
}

/// Integer-valued reals collapse to integers so that unification is a plain
/// equality afterwards.
fn canonical(value: &SqlValue) -> SqlValue {
    match value {
        SqlValue::Real(r)
            if r.fract() == 0.0 && r.abs() <= 9_007_199_254_740_992.0 /* 2^53 */ =>
        {
            SqlValue::Int(*r as i64)
        }
        other => other.clone(),
    }
}

fn value_eq(a: &SqlValue, b: &SqlValue) -> bool {
    match (a, b) {
        (SqlValue::Null, SqlValue::Null) => true,
        (SqlValue::Int(x), SqlValue::Int(y)) => x == y,
        (SqlValue::Real(x), SqlValue::Real(y)) => x == y,
        (SqlValue::Int(x), SqlValue::Real(y)) | (SqlValue::Real(y), SqlValue::Int(x)) => {
            *y == *x as f64
        }
        (SqlValue::Text(x), SqlValue::Text(y)) => x == y,
        (SqlValue::Blob(x), SqlValue::Blob(y)) => x == y,
        _ => false,
    }
}

fn type_rank(v: &SqlValue) -> u8 {
    match v {
        SqlValue::Null => 0,
        SqlValue::Int(_) | SqlValue::Real(_) => 1,
        SqlValue::Text(_) => 2,
        SqlValue::Blob(_) => 3,
    }
}

fn value_cmp(a: &SqlValue, b: &SqlValue) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let rank = type_rank(a).cmp(&type_rank(b));
    if rank != Ordering::Equal {
        return rank;
    }
    match (a, b) {
        (SqlValue::Null, SqlValue::Null) => Ordering::Equal,
        (SqlValue::Int(x), SqlValue::Int(y)) => x.cmp(y),
        (SqlValue::Real(x), SqlValue::Real(y)) => x.total_cmp(y),
        (SqlValue::Int(x), SqlValue::Real(y)) => (*x as f64).total_cmp(y),
        (SqlValue::Real(x), SqlValue::Int(y)) => x.total_cmp(&(*y as f64)),
        (SqlValue::Text(x), SqlValue::Text(y)) => x.cmp(y),
        (SqlValue::Blob(x), SqlValue::Blob(y)) => x.cmp(y),
        _ => unreachable!("ranks matched"),
    }
}

fn rows_eq(a: &[Vec<SqlValue>], b: &[Vec<SqlValue>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(ra, rb)| ra.len() == rb.len() && ra.iter().zip(rb).all(|(x, y)| value_eq(x, y)))
}

/// Compares two successful execution results, honoring the gold side's
/// ordering: ordered sequences when gold has a top-level ORDER BY, multisets
/// otherwise.
pub fn results_match(gold: &ExecutionResult, pred: &ExecutionResult) -> bool {
    if gold.status != ExecStatus::Ok || pred.status != ExecStatus::Ok {
        return false;
    }
    let canon = |rows: &[Vec<SqlValue>]| -> Vec<Vec<SqlValue>> {
        rows.iter()
            .map(|row| row.iter().map(canonical).collect())
            .collect()
    };
    let mut gold_rows = canon(&gold.rows);
    let mut pred_rows = canon(&pred.rows);
    if !gold.ordered {
        let row_cmp = |x: &Vec<SqlValue>, y: &Vec<SqlValue>| {
            x.len().cmp(&y.len()).then_with(|| {
                x.iter()
                    .zip(y)
                    .map(|(a, b)| value_cmp(a, b))
                    .find(|o| *o != std::cmp::Ordering::Equal)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        };
        gold_rows.sort_by(row_cmp);
        pred_rows.sort_by(row_cmp);
    }
    rows_eq(&gold_rows, &pred_rows)
}

/// Execution accuracy for one (gold, prediction) pair.
///
/// The gold query must run successfully; a failing gold is a data error, not
/// a non-match. A failing or timed-out prediction is a non-match.
pub fn exec_match(
    gold_sql: &str,
    pred_sql: &str,
    db_id: &str,
    catalog: &SchemaCatalog,
    timeout: Duration,
) -> Result<bool> {
    let gold = execute(db_id, gold_sql, catalog, timeout)?;
    if gold.status != ExecStatus::Ok {
        return Err(Error::GoldExecution {
            db_id: db_id.to_string(),
            reason: gold.error.unwrap_or_else(|| format!("{:?}", gold.status)),
        });
    }
    let pred = execute(db_id, pred_sql, catalog, timeout)?;
    Ok(results_match(&gold, &pred))
}

/// Test-suite accuracy: [`exec_match`] must hold on every variant database
/// under `variants_root/<db_id>/*.sqlite`. Returns `None` when the database
/// has no usable variants, which reports TS as absent rather than false.
/// Variants where the gold query itself fails are skipped as data errors.
pub fn test_suite_match(
    gold_sql: &str,
    pred_sql: &str,
    db_id: &str,
    variants_root: &Path,
    timeout: Duration,
) -> Result<Option<bool>> {
    let dir = variants_root.join(db_id);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("sqlite"))
        .collect();
    paths.sort();
    let mut checked = 0;
    for path in paths {
        let gold = execute_path(&path, gold_sql, timeout)?;
        if gold.status != ExecStatus::Ok {
            continue; // data error in this variant
        }
        checked += 1;
        let pred = execute_path(&path, pred_sql, timeout)?;
        if !results_match(&gold, &pred) {
            return Ok(Some(false));
        }
    }
    Ok(if checked == 0 { None } else { Some(true) })
}

/// Per-task scoring outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: String,
    pub ex_match: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts_match: Option<bool>,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketStats {
    pub difficulty: Difficulty,
    pub total: usize,
    pub ex_matched: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts_total: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts_matched: Option<usize>,
}

/// Aggregated accuracies, overall and per difficulty bucket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Tasks actually scored (gold data errors are excluded).
    pub n: usize,
    pub ex: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    pub per_difficulty: Vec<BucketStats>,
    /// Tasks excluded because the gold query failed to execute.
    pub gold_errors: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub timeout: Option<Duration>,
    /// External per-task difficulty labels that override the rule table.
    pub difficulty_overrides: Option<HashMap<String, Difficulty>>,
}

/// Scores a full split against predictions aligned by task id.
///
/// `predictions` must contain exactly one `(task_id, sql)` per task; any
/// mismatch is a hard error before any execution. TS columns appear only
/// when `variants_root` is given and variants exist for a task's database.
pub fn evaluate_split(
    tasks: &[TaskInstance],
    predictions: &[(String, String)],
    catalog: &SchemaCatalog,
    variants_root: Option<&Path>,
    options: &EvalOptions,
) -> Result<(EvalReport, Vec<Verdict>)> {
    let by_id: HashMap<&str, &str> = predictions
        .iter()
        .map(|(id, sql)| (id.as_str(), sql.as_str()))
        .collect();
    if by_id.len() != predictions.len() {
        return Err(Error::Alignment("duplicate prediction task id".into()));
    }
    if tasks.len() != predictions.len() {
        return Err(Error::Alignment(format!(
            "{} tasks but {} predictions",
            tasks.len(),
            predictions.len()
        )));
    }
    for task in tasks {
        if !by_id.contains_key(task.id.as_str()) {
            return Err(Error::Alignment(format!(
                "no prediction for task {}",
                task.id
            )));
        }
    }
    let timeout = options.timeout.unwrap_or(DEFAULT_EXEC_TIMEOUT);

    let mut verdicts = Vec::with_capacity(tasks.len());
    let mut gold_errors = 0;
    for task in tasks {
        let gold_sql = task.gold()?;
        let pred_sql = by_id[task.id.as_str()];
        let ex = match exec_match(gold_sql, pred_sql, &task.db_id, catalog, timeout) {
            Ok(m) => m,
            Err(Error::GoldExecution { .. }) => {
                gold_errors += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let ts = match variants_root {
            Some(root) => test_suite_match(gold_sql, pred_sql, &task.db_id, root, timeout)?,
            None => None,
        };
        let difficulty = options
            .difficulty_overrides
            .as_ref()
            .and_then(|m| m.get(&task.id).copied())
            .unwrap_or_else(|| classify_difficulty(gold_sql));
        verdicts.push(Verdict {
            task_id: task.id.clone(),
            ex_match: ex,
            ts_match: ts,
            difficulty,
        });
    }

    Ok((aggregate(&verdicts, gold_errors), verdicts))
}

/// Builds the report from verdicts; exposed so stores of verdicts can be
/// re-aggregated without re-executing.
pub fn aggregate(verdicts: &[Verdict], gold_errors: usize) -> EvalReport {
    let n = verdicts.len();
    let ex_matched = verdicts.iter().filter(|v| v.ex_match).count();
    let ts_counted = verdicts.iter().filter(|v| v.ts_match.is_some()).count();
    let ts_matched = verdicts.iter().filter(|v| v.ts_match == Some(true)).count();

    let per_difficulty = Difficulty::ALL
        .iter()
        .map(|&difficulty| {
            let bucket: Vec<&Verdict> = verdicts
                .iter()
                .filter(|v| v.difficulty == difficulty)
                .collect();
            let b_ts_total = bucket.iter().filter(|v| v.ts_match.is_some()).count();
            BucketStats {
                difficulty,
                total: bucket.len(),
                ex_matched: bucket.iter().filter(|v| v.ex_match).count(),
                ts_total: (ts_counted > 0).then_some(b_ts_total),
                ts_matched: (ts_counted > 0)
                    .then(|| bucket.iter().filter(|v| v.ts_match == Some(true)).count()),
            }
        })
        .collect();

    EvalReport {
        n,
        ex: if n == 0 {
            0.0
        } else {
            ex_matched as f64 / n as f64
        },
        ts: (ts_counted > 0).then(|| ts_matched as f64 / ts_counted as f64),
        per_difficulty,
        gold_errors,
    }
}

/// Plain-text table of the report, one row per bucket plus the overall row.
pub fn render_report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>8} {:>8}\n",
        "bucket", "count", "EX", "TS"
    ));
    let fmt_acc = |matched: usize, total: usize| {
        if total == 0 {
            "—".to_string()
        } else {
            format!("{:.3}", matched as f64 / total as f64)
        }
    };
    for bucket in &report.per_difficulty {
        let ts = match (bucket.ts_matched, bucket.ts_total) {
            (Some(m), Some(t)) => fmt_acc(m, t),
            _ => "—".to_string(),
        };
        out.push_str(&format!(
            "{:<12} {:>6} {:>8} {:>8}\n",
            bucket.difficulty.as_str(),
            bucket.total,
            fmt_acc(bucket.ex_matched, bucket.total),
            ts
        ));
    }
    let ts_overall = report
        .ts
        .map(|t| format!("{t:.3}"))
        .unwrap_or_else(|| "—".to_string());
    out.push_str(&format!(
        "{:<12} {:>6} {:>8} {:>8}\n",
        "all",
        report.n,
        format!("{:.3}", report.ex),
        ts_overall
    ));
    out
}

/// One-line summary printed by the eval command, e.g. `EX=0.700 TS=—`.
pub fn summary_line(report: &EvalReport) -> String {
    let ts = report
        .ts
        .map(|t| format!("{t:.3}"))
        .unwrap_or_else(|| "—".to_string());
    format!("EX={:.3} TS={}", report.ex, ts)
}
