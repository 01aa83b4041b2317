//! Demonstration selection: score QSESet entries against the current task by
//! combined question/SQL cosine similarity and take the top k.
//!
//! Both the task's question and its draft SQL are embedded; each entry is
//! scored against both and the two similarities merge as a convex
//! combination. Setting one weight to zero gives the question-only and
//! SQL-only ablations. The scan is exhaustive over the set (a few hundred
//! entries), double precision, exact comparisons, ties broken by store
//! position.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::qse::QseEntry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    /// Demonstrations to retrieve.
    pub k: usize,
    pub w_question: f64,
    pub w_sql: f64,
}

impl RetrievalConfig {
    pub const DEFAULT_K: usize = 10;

    pub fn new(k: usize, w_question: f64, w_sql: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("retrieval k must be positive".into()));
        }
        if w_question < 0.0 || w_sql < 0.0 {
            return Err(Error::Config(
                "retrieval weights must be non-negative".into(),
            ));
        }
        if (w_question + w_sql - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "retrieval weights must sum to 1, got {w_question} + {w_sql}"
            )));
        }
        Ok(RetrievalConfig {
            k,
            w_question,
            w_sql,
        })
    }

    /// Question-only ablation.
    pub fn question_only(k: usize) -> Self {
        RetrievalConfig {
            k,
            w_question: 1.0,
            w_sql: 0.0,
        }
    }

    /// SQL-only ablation.
    pub fn sql_only(k: usize) -> Self {
        RetrievalConfig {
            k,
            w_question: 0.0,
            w_sql: 1.0,
        }
    }
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: Self::DEFAULT_K,
            w_question: 0.5,
            w_sql: 0.5,
        }
    }
}

/// A QSESet entry scored against one task.
#[derive(Debug, Clone)]
pub struct ScoredEntry<'a> {
    pub entry: &'a QseEntry,
    /// Position in the store, the tie-breaker.
    pub index: usize,
    pub q_sim: f64,
    pub s_sim: f64,
    pub combined: f64,
}

/// Cosine similarity of two equal-dimension, nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Embedding(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Embedding("empty vector".into()));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Embedding("zero vector has no direction".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Scores one entry: question similarity, SQL similarity, and their convex
/// combination per the config.
pub fn score<'a>(
    task_q_emb: &[f64],
    task_sql_emb: &[f64],
    entry: &'a QseEntry,
    index: usize,
    cfg: &RetrievalConfig,
) -> Result<ScoredEntry<'a>> {
    let q_sim = cosine(task_q_emb, &entry.question_embedding)?;
    let s_sim = cosine(task_sql_emb, &entry.sql_embedding)?;
    Ok(ScoredEntry {
        entry,
        index,
        q_sim,
        s_sim,
        combined: cfg.w_question * q_sim + cfg.w_sql * s_sim,
    })
}

// Preference order: higher combined first, earlier store position first.
fn prefer(a_combined: f64, a_index: usize, b_combined: f64, b_index: usize) -> Ordering {
    a_combined
        .total_cmp(&b_combined)
        .then_with(|| b_index.cmp(&a_index))
}

struct HeapItem {
    combined: f64,
    index: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        prefer(self.combined, self.index, other.combined, other.index)
    }
}

/// Selects the `min(k, n)` best-scoring entries, non-increasing by combined
/// score, ties by ascending store position. Empty input yields an empty
/// result (callers fall back to plain zero-shot).
pub fn top_k<'a>(
    task_q_emb: &[f64],
    task_sql_emb: &[f64],
    entries: &'a [QseEntry],
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredEntry<'a>>> {
    let scored: Vec<ScoredEntry<'a>> = entries
        .iter()
        .enumerate()
        .map(|(index, entry)| score(task_q_emb, task_sql_emb, entry, index, cfg))
        .collect::<Result<_>>()?;

    // Bounded min-heap of the k best seen so far; the root is the worst kept.
    let mut heap: BinaryHeap<std::cmp::Reverse<HeapItem>> = BinaryHeap::with_capacity(cfg.k + 1);
    for s in &scored {
        heap.push(std::cmp::Reverse(HeapItem {
            combined: s.combined,
            index: s.index,
        }));
        if heap.len() > cfg.k {
            heap.pop();
        }
    }
    let mut kept: Vec<usize> = heap.into_iter().map(|r| r.0.index).collect();
    kept.sort_by(|&a, &b| prefer(scored[b].combined, b, scored[a].combined, a));
    Ok(kept.into_iter().map(|i| scored[i].clone()).collect())
}
