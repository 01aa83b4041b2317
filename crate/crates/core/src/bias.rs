//! Error-bias analysis: cluster question embeddings with k-means and report
//! error distribution and error rate per cluster and per database.
//!
//! k-means uses k-means++ initialization from a fixed seed and Lloyd
//! iterations; everything is deterministic given (vectors, k, seed). The
//! objective (inertia) is checked to be non-increasing at every iteration.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input vector; each vector's assigned centroid is
    /// its nearest.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Objective value per iteration, non-increasing.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centroid uniform, then D²-weighted sampling.
/// Deterministic given (vectors, k, seed). Exposed so an independent Lloyd
/// oracle can start from the same centroids.
pub fn plus_plus_init(vectors: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(vectors[rng.gen_range(0..vectors.len())].clone());
    let mut weights = vec![0.0f64; vectors.len()];
    while centroids.len() < k {
        let mut total = 0.0;
        for (w, v) in weights.iter_mut().zip(vectors) {
            *w = centroids
                .iter()
                .map(|c| sq_dist(v, c))
                .fold(f64::INFINITY, f64::min);
            total += *w;
        }
        if total > 0.0 {
            let sampler = WeightedIndex::new(&weights).expect("positive total weight");
            centroids.push(vectors[sampler.sample(&mut rng)].clone());
        } else {
            // All remaining points coincide with a centroid; take the first
            // vector not yet chosen to keep the count.
            let next = vectors
                .iter()
                .find(|v| !centroids.contains(v))
                .unwrap_or(&vectors[0]);
            centroids.push(next.clone());
        }
    }
    centroids
}

fn assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut assignments = Vec::with_capacity(vectors.len());
    let mut inertia = 0.0;
    for v in vectors {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(v, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        assignments.push(best);
        inertia += best_d;
    }
    (assignments, inertia)
}

/// Empty clusters are re-seeded to the point farthest from its assigned
/// centroid; returns the corrected inertia.
fn fix_empty_clusters(
    vectors: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignments: &mut [usize],
) -> f64 {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let farthest = vectors
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .max_by(|(i, v), (j, w)| {
                sq_dist(v, &centroids[assignments[*i]])
                    .total_cmp(&sq_dist(w, &centroids[assignments[*j]]))
                    .then(j.cmp(i)) // deterministic: first index wins ties
            })
            .map(|(i, _)| i)
            .expect("n >= k leaves a donor point");
        centroids[empty] = vectors[farthest].clone();
        assignments[farthest] = empty;
    }
    assignments
        .iter()
        .zip(vectors)
        .map(|(&a, v)| sq_dist(v, &centroids[a]))
        .sum()
}

fn means(vectors: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        debug_assert!(count > 0, "empty clusters were fixed before the update");
        for s in sum.iter_mut() {
            *s /= count as f64;
        }
    }
    sums
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when the largest centroid movement falls below `tol` or after
/// `max_iter` iterations; a final assignment pass guarantees every vector
/// sits in its nearest cluster.
pub fn kmeans(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::Clustering("k must be positive".into()));
    }
    if vectors.len() < k {
        return Err(Error::Clustering(format!(
            "k={k} exceeds {} vectors",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Clustering(
            "vectors must share one nonzero dimension".into(),
        ));
    }

    let mut centroids = plus_plus_init(vectors, k, seed);
    let mut history: Vec<f64> = Vec::new();
    let mut assignments = vec![0usize; vectors.len()];
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let (a, mut inertia) = assign(vectors, &centroids);
        assignments = a;
        if k > 1 {
            inertia = fix_empty_clusters(vectors, &mut centroids, &mut assignments);
        }
        if let Some(&prev) = history.last() {
            if inertia > prev * (1.0 + 1e-12) + 1e-12 {
                return Err(Error::Clustering(format!(
                    "inertia increased: {prev} -> {inertia}"
                )));
            }
        }
        history.push(inertia);

        let updated = means(vectors, &assignments, k, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(old, new)| sq_dist(old, new).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < tol {
            break;
        }
    }

    // Final pass so assignments match the final centroids.
    let (a, mut inertia) = assign(vectors, &centroids);
    assignments = a;
    if k > 1 {
        inertia = fix_empty_clusters(vectors, &mut centroids, &mut assignments);
    }
    history.push(inertia);

    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
        seed,
        iterations,
        inertia_history: history,
    })
}

/// Scales every vector to unit norm; zero vectors are left untouched.
pub fn unit_normalize(vectors: &mut [Vec<f64>]) {
    for v in vectors.iter_mut() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
    }
}

/// One group (cluster or database) of the bias report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasGroup {
    pub group: String,
    pub total: usize,
    pub errors: usize,
    pub error_rate: f64,
}

/// Per-group error distribution, sorted by error rate descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub groups: Vec<BiasGroup>,
}

fn finish_report(mut groups: Vec<BiasGroup>) -> BiasReport {
    groups.sort_by(|a, b| {
        b.error_rate
            .total_cmp(&a.error_rate)
            .then_with(|| a.group.cmp(&b.group))
    });
    BiasReport { groups }
}

/// Error distribution per cluster. `correct[i]` is the verdict for the
/// vector behind `model.assignments[i]`.
pub fn cluster_error_report(model: &ClusterModel, correct: &[bool]) -> Result<BiasReport> {
    if correct.len() != model.assignments.len() {
        return Err(Error::Clustering(format!(
            "{} verdicts for {} assignments",
            correct.len(),
            model.assignments.len()
        )));
    }
    let mut totals = vec![0usize; model.k];
    let mut errors = vec![0usize; model.k];
    for (&cluster, &ok) in model.assignments.iter().zip(correct) {
        totals[cluster] += 1;
        if !ok {
            errors[cluster] += 1;
        }
    }
    let groups = (0..model.k)
        .map(|c| BiasGroup {
            group: c.to_string(),
            total: totals[c],
            errors: errors[c],
            error_rate: if totals[c] == 0 {
                0.0
            } else {
                errors[c] as f64 / totals[c] as f64
            },
        })
        .collect();
    Ok(finish_report(groups))
}

/// Error distribution per database. Groups with fewer than `min_samples`
/// instances are dropped unless `min_samples` is zero (the full report).
pub fn db_error_report(
    db_ids: &[String],
    correct: &[bool],
    min_samples: usize,
) -> Result<BiasReport> {
    if db_ids.len() != correct.len() {
        return Err(Error::Clustering(format!(
            "{} verdicts for {} db ids",
            correct.len(),
            db_ids.len()
        )));
    }
    let mut by_db: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (db, &ok) in db_ids.iter().zip(correct) {
        let slot = by_db.entry(db.as_str()).or_default();
        slot.0 += 1;
        if !ok {
            slot.1 += 1;
        }
    }
    let groups = by_db
        .into_iter()
        .filter(|(_, (total, _))| min_samples == 0 || *total >= min_samples)
        .map(|(db, (total, errors))| BiasGroup {
            group: db.to_string(),
            total,
            errors,
            error_rate: errors as f64 / total as f64,
        })
        .collect();
    Ok(finish_report(groups))
}

/// CSV form: `group,total,errors,error_rate`.
pub fn write_csv(report: &BiasReport, path: &Path) -> Result<()> {
    let mut text = String::from("group,total,errors,error_rate\n");
    for g in &report.groups {
        text.push_str(&format!(
            "{},{},{},{:.6}\n",
            g.group, g.total, g.errors, g.error_rate
        ));
    }
    crate::write_atomic(path, text.as_bytes())
}

/// Whitespace-separated plot data with a comment header, ready for gnuplot.
pub fn write_plot_data(report: &BiasReport, path: &Path) -> Result<()> {
    let mut text = String::from("# group total errors error_rate\n");
    for g in &report.groups {
        text.push_str(&format!(
            "{} {} {} {:.6}\n",
            g.group, g.total, g.errors, g.error_rate
        ));
    }
    crate::write_atomic(path, text.as_bytes())
}
