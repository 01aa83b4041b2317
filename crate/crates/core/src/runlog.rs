//! JSON-lines run log of per-instance stage outcomes.
//!
//! Each pipeline stage appends one record per instance it touches, so a run
//! can be audited and its outcomes (correct / error / skipped) re-used by
//! the bias analysis without re-executing anything. Records carry no
//! wall-clock fields; re-runs of a cached pipeline write identical logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAGE_COLLECT: &str = "collect";
pub const STAGE_EPIGEN: &str = "epigen";
pub const STAGE_VERIFY: &str = "verify";
pub const STAGE_PERSIST: &str = "persist";
pub const STAGE_INFER: &str = "infer";

pub const OUTCOME_CORRECT: &str = "correct";
pub const OUTCOME_ERROR: &str = "error";
pub const OUTCOME_SKIPPED: &str = "skipped";
pub const OUTCOME_DATA_ERROR: &str = "data-error";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunLogRecord {
    pub task_id: String,
    pub stage: String,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl RunLogRecord {
    pub fn new(task_id: &str, stage: &str, outcome: &str) -> Self {
        RunLogRecord {
            task_id: task_id.to_string(),
            stage: stage.to_string(),
            outcome: outcome.to_string(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Append-only writer; every record is flushed at its line boundary.
pub struct RunLog {
    sink: Option<BufWriter<File>>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(RunLog {
            sink: Some(BufWriter::new(file)),
        })
    }

    /// A log that drops everything; for library callers without a log file.
    pub fn disabled() -> Self {
        RunLog { sink: None }
    }

    pub fn log(&mut self, record: &RunLogRecord) {
        if let Some(sink) = &mut self.sink {
            // Log failures must not kill a batch run.
            let _ = serde_json::to_writer(&mut *sink, record);
            let _ = sink.write_all(b"\n");
            let _ = sink.flush();
        }
    }
}

pub fn load_runlog(path: &Path) -> Result<Vec<RunLogRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            index: lineno,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
