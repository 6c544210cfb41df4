//! Exact brute-force nearest-neighbor search over subsets of embedding rows,
//! plus query → relevant-passage distance diagnostics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{CorpusIndex, EmbeddingMatrix, QuerySet, RelevanceJudgments};
use crate::error::{Error, Result};
use crate::registry::Registry;

/// A distance between embedding rows.
///
/// Search compares `key` values, which must be monotone in the reported
/// distance; `distance` maps a key back to metric units.
pub trait DistanceMetric: Send + Sync {
    fn name(&self) -> &'static str;
    fn key(&self, a: &[f32], b: &[f32]) -> f64;
    fn distance(&self, key: f64) -> f64;
}

/// Squared Euclidean internally, square root on output.
pub struct Euclidean;

impl DistanceMetric for Euclidean {
    fn name(&self) -> &'static str {
        "euclidean"
    }

    fn key(&self, a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum()
    }

    fn distance(&self, key: f64) -> f64 {
        key.sqrt()
    }
}

/// `1 - cos(a, b)`; a zero vector is treated as orthogonal to everything.
pub struct Cosine;

impl DistanceMetric for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn key(&self, a: &[f32], b: &[f32]) -> f64 {
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (f64::from(x), f64::from(y));
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            return 1.0;
        }
        (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
    }

    fn distance(&self, key: f64) -> f64 {
        key
    }
}

pub fn metrics() -> &'static Registry<dyn DistanceMetric> {
    static REGISTRY: OnceLock<Registry<dyn DistanceMetric>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn DistanceMetric> = Registry::new("metric");
        reg.register("euclidean", "L2 distance", |_| Arc::new(Euclidean));
        reg.register("cosine", "one minus cosine similarity", |_| {
            Arc::new(Cosine)
        });
        reg
    })
}

pub fn metric(name: &str) -> Result<Arc<dyn DistanceMetric>> {
    metrics().build(name, ())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row_index: usize,
    pub distance: f32,
}

/// (key, row) ordered by key then row.
#[derive(Clone, Copy)]
struct Candidate {
    key: f64,
    row: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// The `min(k, |subset|)` rows of `subset` closest to `q`, nearest first.
/// Equal distances are ordered by row index, so the result does not depend
/// on the order of `subset`.
pub fn top_k(
    m: &EmbeddingMatrix,
    subset: &[usize],
    q: &[f32],
    k: usize,
    metric: &dyn DistanceMetric,
) -> Result<Vec<Neighbor>> {
    if q.len() != m.dim() {
        return Err(Error::DimMismatch {
            expected: m.dim(),
            found: q.len(),
        });
    }
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    if k == 0 {
        return Err(Error::InvalidParams("k must be at least 1".into()));
    }
    // max-heap holding the k best seen so far
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for &row in subset {
        let c = Candidate {
            key: metric.key(q, m.row(row)),
            row,
        };
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().unwrap() {
            heap.pop();
            heap.push(c);
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| Neighbor {
            row_index: c.row,
            distance: metric.distance(c.key) as f32,
        })
        .collect())
}

/// [`top_k`] for many queries, parallel over queries; output in query order.
pub fn top_k_batch(
    m: &EmbeddingMatrix,
    subset: &[usize],
    queries: &[&[f32]],
    k: usize,
    metric: &dyn DistanceMetric,
) -> Result<Vec<Vec<Neighbor>>> {
    queries
        .par_iter()
        .map(|q| top_k(m, subset, q, k, metric))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryDistance {
    pub query_id: String,
    /// Distance to the closest relevant passage.
    pub min_distance: f64,
    pub nearest_relevant: String,
    /// 1-based rank of that passage among all passages.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub metric: String,
    pub per_query: Vec<QueryDistance>,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub rank_mean: f64,
    pub rank_median: f64,
}

/// Linear-interpolated percentile of already sorted values.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// For every judged query: distance to its closest relevant passage and that
/// passage's rank in a full scan of the collection.
pub fn distance_stats(
    queries: &QuerySet,
    qrels: &RelevanceJudgments,
    m: &EmbeddingMatrix,
    index: &CorpusIndex,
    metric: &dyn DistanceMetric,
) -> Result<DistanceReport> {
    queries.check_dim(m)?;
    let judged: Vec<(usize, Vec<usize>)> = queries
        .query_ids
        .iter()
        .enumerate()
        .filter(|(_, qid)| qrels.relevant(qid).is_some())
        .map(|(i, qid)| Ok((i, qrels.relevant_rows(qid, index)?)))
        .collect::<Result<_>>()?;
    if judged.is_empty() {
        return Err(Error::EmptyJudgments);
    }

    let per_query: Vec<QueryDistance> = judged
        .par_iter()
        .map(|(qi, rel_rows)| {
            let q = queries.embedding(*qi);
            let keys: Vec<f64> = m.rows().map(|p| metric.key(q, p)).collect();
            let best = rel_rows
                .iter()
                .map(|&r| Candidate {
                    key: keys[r],
                    row: r,
                })
                .min()
                .expect("judged queries have relevant rows");
            let closer = keys
                .iter()
                .enumerate()
                .filter(|&(row, &key)| Candidate { key, row } < best)
                .count();
            QueryDistance {
                query_id: queries.query_ids[*qi].clone(),
                min_distance: metric.distance(best.key),
                nearest_relevant: index.passage_id(best.row).to_string(),
                rank: closer + 1,
            }
        })
        .collect();

    let mut dists: Vec<f64> = per_query.iter().map(|d| d.min_distance).collect();
    dists.sort_by(f64::total_cmp);
    let mut ranks: Vec<f64> = per_query.iter().map(|d| d.rank as f64).collect();
    ranks.sort_by(f64::total_cmp);
    let n = dists.len() as f64;
    Ok(DistanceReport {
        metric: metric.name().to_string(),
        mean: dists.iter().sum::<f64>() / n,
        median: percentile(&dists, 0.5),
        p90: percentile(&dists, 0.9),
        rank_mean: ranks.iter().sum::<f64>() / n,
        rank_median: percentile(&ranks, 0.5),
        per_query,
    })
}

impl DistanceReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# metric\t{}", self.metric).unwrap();
        writeln!(out, "# queries\t{}", self.per_query.len()).unwrap();
        writeln!(out, "# mean\t{}", self.mean).unwrap();
        writeln!(out, "# median\t{}", self.median).unwrap();
        writeln!(out, "# p90\t{}", self.p90).unwrap();
        writeln!(out, "# rank_mean\t{}", self.rank_mean).unwrap();
        writeln!(out, "# rank_median\t{}", self.rank_median).unwrap();
        writeln!(out, "query_id\tmin_distance\tnearest_relevant\trank").unwrap();
        for d in &self.per_query {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                d.query_id, d.min_distance, d.nearest_relevant, d.rank
            )
            .unwrap();
        }
        out
    }
}
