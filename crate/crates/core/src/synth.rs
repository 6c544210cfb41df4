//! Seeded needle-in-a-haystack datasets with known ground truth.
//!
//! Passages are drawn from a mixture of isotropic Gaussians around random
//! unit-norm centers. Each query is a copy of a distinct, uniformly chosen
//! passage displaced by Gaussian noise, and that passage is its only relevant
//! item. Everything is drawn from one ChaCha8 stream seeded by `seed`.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusIndex, EmbeddingMatrix, QuerySet, RelevanceJudgments};
use crate::error::{Error, Result};
use crate::knn::{self, Euclidean};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_passages: usize,
    pub n_queries: usize,
    pub dim: usize,
    pub n_clusters: usize,
    /// Scale of the displacement of a query from its passage.
    pub noise_sigma: f64,
    /// Per-coordinate spread of passages around their cluster center.
    pub cluster_sigma: f64,
    /// Consecutive passages grouped into one document.
    pub passages_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_passages: 5000,
            n_queries: 500,
            dim: 32,
            n_clusters: 10,
            noise_sigma: 0.005,
            cluster_sigma: 0.1,
            passages_per_doc: 1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n_passages == 0 || self.n_queries == 0 || self.n_clusters == 0 {
            return bad("n_passages, n_queries and n_clusters must be positive".into());
        }
        if self.n_queries > self.n_passages {
            return bad(format!(
                "n_queries {} exceeds n_passages {}",
                self.n_queries, self.n_passages
            ));
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
            || !(self.cluster_sigma >= 0.0 && self.cluster_sigma.is_finite())
        {
            return bad("sigmas must be finite and non-negative".into());
        }
        if self.passages_per_doc == 0 {
            return bad("passages_per_doc must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub passages: EmbeddingMatrix,
    pub index: CorpusIndex,
    pub queries: QuerySet,
    pub qrels: RelevanceJudgments,
    /// Relevant passage row of each query, in query order.
    pub needles: Vec<usize>,
}

pub fn passage_id(row: usize) -> String {
    format!("p{row:07}")
}

pub fn query_id(i: usize) -> String {
    format!("q{i:06}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut centers = Vec::with_capacity(cfg.n_clusters);
    for _ in 0..cfg.n_clusters {
        let mut c: Vec<f64> = (0..dim).map(|_| gauss(&mut rng)).collect();
        let norm = c
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        c.iter_mut().for_each(|v| *v /= norm);
        centers.push(c);
    }

    let mut data = Vec::with_capacity(cfg.n_passages * dim);
    for _ in 0..cfg.n_passages {
        let c = &centers[rng.random_range(0..cfg.n_clusters)];
        for &cv in c {
            data.push((cv + cfg.cluster_sigma * gauss(&mut rng)) as f32);
        }
    }
    let passages = EmbeddingMatrix::new(cfg.n_passages, dim, data)?;

    let needles: Vec<usize> = index::sample(&mut rng, cfg.n_passages, cfg.n_queries).into_vec();
    let mut qdata = Vec::with_capacity(cfg.n_queries * dim);
    for &row in &needles {
        for &pv in passages.row(row) {
            qdata.push((f64::from(pv) + cfg.noise_sigma * gauss(&mut rng)) as f32);
        }
    }
    let query_ids: Vec<String> = (0..cfg.n_queries).map(query_id).collect();
    let queries = QuerySet::new(
        query_ids.clone(),
        EmbeddingMatrix::new(cfg.n_queries, dim, qdata)?,
    )?;

    let ids: Vec<String> = (0..cfg.n_passages).map(passage_id).collect();
    let docs = ids
        .iter()
        .enumerate()
        .map(|(row, id)| (id.clone(), format!("d{:07}", row / cfg.passages_per_doc)))
        .collect();
    let index = CorpusIndex::with_documents(ids, &docs)?;

    let mut qrels = RelevanceJudgments::new();
    for (qid, &row) in query_ids.iter().zip(&needles) {
        qrels.insert(qid.clone(), index.passage_id(row));
    }
    Ok(SynthDataset {
        passages,
        index,
        queries,
        qrels,
        needles,
    })
}

/// Measured placement of needles in an exhaustive Euclidean scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub config: SynthConfig,
    /// `(k, fraction of queries whose needle ranks within k)`.
    pub within_top: Vec<(usize, f64)>,
    pub median_rank: f64,
    pub max_rank: usize,
    pub mean_distance: f64,
}

pub fn self_check(cfg: &SynthConfig, data: &SynthDataset) -> Result<SynthReport> {
    let stats = knn::distance_stats(
        &data.queries,
        &data.qrels,
        &data.passages,
        &data.index,
        &Euclidean,
    )?;
    let n = stats.per_query.len() as f64;
    let within_top = [1usize, 5, 10, 20, 50]
        .iter()
        .map(|&k| {
            (
                k,
                stats.per_query.iter().filter(|d| d.rank <= k).count() as f64 / n,
            )
        })
        .collect();
    Ok(SynthReport {
        config: cfg.clone(),
        within_top,
        median_rank: stats.rank_median,
        max_rank: stats.per_query.iter().map(|d| d.rank).max().unwrap_or(0),
        mean_distance: stats.mean,
    })
}

/// File names written by [`write_dataset`] inside the output directory.
pub mod files {
    pub const PASSAGES: &str = "passages.emb";
    pub const QUERIES: &str = "queries.emb";
    pub const QRELS: &str = "qrels.tsv";
    pub const DOCMAP: &str = "docmap.tsv";
    pub const REPORT: &str = "synth_report.json";
}

/// Writes EMB1 matrices with `.ids` sidecars, qrels and the document map.
pub fn write_dataset(data: &SynthDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let passages = dir.join(files::PASSAGES);
    corpus::save_embeddings(&data.passages, &passages)?;
    corpus::save_ids(data.index.passage_ids(), corpus::ids_path(&passages))?;
    let queries = dir.join(files::QUERIES);
    corpus::save_embeddings(&data.queries.embeddings, &queries)?;
    corpus::save_ids(&data.queries.query_ids, corpus::ids_path(&queries))?;
    corpus::save_qrels(&data.qrels, dir.join(files::QRELS))?;
    let mut docmap = String::new();
    for pid in data.index.passage_ids() {
        docmap.push_str(pid);
        docmap.push('\t');
        docmap.push_str(data.index.document_of(pid).unwrap());
        docmap.push('\n');
    }
    let path = dir.join(files::DOCMAP);
    fs::write(&path, docmap).map_err(|e| Error::io(path, e))
}
