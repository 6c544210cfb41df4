//! Bagged SVR ensemble: per-subset training sets, per-subset scaler + SVR,
//! and union-of-positives retrieval.

mod model_file;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagging::{self, BaggingPlan};
use crate::corpus::{CorpusIndex, EmbeddingMatrix, QuerySet, RelevanceJudgments};
use crate::error::{Error, Result};
use crate::knn::{self, DistanceMetric, Neighbor};
use crate::metrics::{self, ClassificationReport};
use crate::registry::Registry;
use crate::run::{QueryRun, RunFile};
use crate::scaler::FeatureScaler;
use crate::svr::{self, SvrModel, SvrParams};

pub use model_file::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION, MODEL_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerFit {
    /// Fit on every row of the subset before the train/test split.
    All,
    /// Fit on the training rows only.
    Train,
}

impl std::str::FromStr for ScalerFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ScalerFit::All),
            "train" => Ok(ScalerFit::Train),
            _ => Err(Error::InvalidParams(format!(
                "scaler_fit must be all or train, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ScalerFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScalerFit::All => "all",
            ScalerFit::Train => "train",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Neighbors per query during training.
    pub k: usize,
    /// Number of bagging subsets.
    pub s: usize,
    pub overlap: f64,
    pub svr: SvrParams,
    /// Scores at or above this are positive.
    pub threshold: f64,
    /// Fraction of each subset's rows held out for the test report.
    pub split: f64,
    pub seed: u64,
    pub metric: String,
    pub scaler_fit: ScalerFit,
    pub missing_positive: String,
    /// Neighbors per member at retrieval time; defaults to `k`.
    pub infer_k: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 50,
            s: 35,
            overlap: 0.6,
            svr: SvrParams::default(),
            threshold: 0.5,
            split: 0.1,
            seed: 0,
            metric: "euclidean".to_string(),
            scaler_fit: ScalerFit::All,
            missing_positive: "skip".to_string(),
            infer_k: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParams(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidParams(format!(
                "split must be in (0, 1), got {}",
                self.split
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidParams("threshold must be finite".into()));
        }
        if self.infer_k == Some(0) {
            return Err(Error::InvalidParams("infer_k must be positive".into()));
        }
        self.svr.validate()?;
        knn::metric(&self.metric)?;
        missing_positive_policy(&self.missing_positive)?;
        Ok(())
    }

    pub fn inference_k(&self) -> usize {
        self.infer_k.unwrap_or(self.k)
    }
}

/// What to do with a query whose relevant passage is not among its `k`
/// nearest neighbors in a subset.
pub trait MissingPositivePolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// `relevant` holds the query's relevant passages inside the subset,
    /// nearest first. Returns false when the query's rows are to be dropped.
    fn resolve(&self, neighbors: &mut Vec<Neighbor>, relevant: &[Neighbor]) -> bool;
}

pub struct Skip;

impl MissingPositivePolicy for Skip {
    fn name(&self) -> &'static str {
        "skip"
    }

    fn resolve(&self, _: &mut Vec<Neighbor>, _: &[Neighbor]) -> bool {
        false
    }
}

/// Swaps the farthest neighbor for the nearest relevant passage.
pub struct Inject;

impl MissingPositivePolicy for Inject {
    fn name(&self) -> &'static str {
        "inject"
    }

    fn resolve(&self, neighbors: &mut Vec<Neighbor>, relevant: &[Neighbor]) -> bool {
        match (relevant.first(), neighbors.last_mut()) {
            (Some(&needle), Some(last)) => {
                *last = needle;
                true
            }
            _ => false,
        }
    }
}

pub fn missing_positive_policies() -> &'static Registry<dyn MissingPositivePolicy> {
    static REGISTRY: OnceLock<Registry<dyn MissingPositivePolicy>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn MissingPositivePolicy> = Registry::new("missing_positive policy");
        reg.register("skip", "drop the query from the subset", |_| Arc::new(Skip));
        reg.register(
            "inject",
            "replace the k-th neighbor with the nearest relevant passage",
            |_| Arc::new(Inject),
        );
        reg
    })
}

pub fn missing_positive_policy(name: &str) -> Result<Arc<dyn MissingPositivePolicy>> {
    missing_positive_policies().build(name, ())
}

/// `[query | passage]` rows with 0/1 relevance labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub width: usize,
    /// Row-major `labels.len() × width`.
    pub features: Vec<f32>,
    pub labels: Vec<f32>,
    /// `(query position in the query set, passage row)` per feature row.
    pub provenance: Vec<(usize, usize)>,
}

impl FeatureSet {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    /// Copies the selected rows into a dense row-major buffer.
    fn gather(&self, rows: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::with_capacity(rows.len() * self.width);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.labels[r]);
        }
        (x, y)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub queries: usize,
    /// Queries kept after the missing-positive policy.
    pub kept: usize,
    /// Queries whose relevant passage was outside the top k.
    pub missing_positive: usize,
    pub rows: usize,
    pub positives: usize,
}

fn concat_into(out: &mut Vec<f32>, q: &[f32], p: &[f32]) {
    out.extend_from_slice(q);
    out.extend_from_slice(p);
}

/// Builds the training rows of one subset from its assigned queries (given as
/// positions in `queries`).
#[allow(clippy::too_many_arguments)]
pub fn build_training_set(
    subset: &[usize],
    assigned: &[usize],
    m: &EmbeddingMatrix,
    index: &CorpusIndex,
    queries: &QuerySet,
    qrels: &RelevanceJudgments,
    cfg: &TrainConfig,
) -> Result<(FeatureSet, BuildReport)> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    queries.check_dim(m)?;
    let metric = knn::metric(&cfg.metric)?;
    let policy = missing_positive_policy(&cfg.missing_positive)?;
    let mut sorted_subset = subset.to_vec();
    sorted_subset.sort_unstable();

    let per_query: Vec<Option<Vec<(usize, bool)>>> = assigned
        .par_iter()
        .map(|&qi| -> Result<Option<Vec<(usize, bool)>>> {
            let q = queries.embedding(qi);
            let rel_rows = qrels.relevant_rows(&queries.query_ids[qi], index)?;
            let mut neighbors = knn::top_k(m, &sorted_subset, q, cfg.k, metric.as_ref())?;
            let has_positive = neighbors.iter().any(|n| rel_rows.contains(&n.row_index));
            if !has_positive {
                let in_subset: Vec<usize> = rel_rows
                    .iter()
                    .copied()
                    .filter(|r| sorted_subset.binary_search(r).is_ok())
                    .collect();
                let relevant = if in_subset.is_empty() {
                    Vec::new()
                } else {
                    knn::top_k(m, &in_subset, q, in_subset.len(), metric.as_ref())?
                };
                if !policy.resolve(&mut neighbors, &relevant) {
                    return Ok(None);
                }
            }
            Ok(Some(
                neighbors
                    .iter()
                    .map(|n| (n.row_index, rel_rows.contains(&n.row_index)))
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;

    let width = 2 * m.dim();
    let mut fs = FeatureSet {
        width,
        ..FeatureSet::default()
    };
    let mut report = BuildReport {
        queries: assigned.len(),
        ..BuildReport::default()
    };
    for (&qi, rows) in assigned.iter().zip(per_query) {
        let Some(rows) = rows else {
            report.missing_positive += 1;
            continue;
        };
        report.kept += 1;
        let q = queries.embedding(qi);
        for (row, relevant) in rows {
            concat_into(&mut fs.features, q, m.row(row));
            fs.labels.push(if relevant { 1.0 } else { 0.0 });
            fs.provenance.push((qi, row));
            report.positives += usize::from(relevant);
        }
    }
    if cfg.missing_positive != "skip" {
        // injected queries are not dropped; count them as resolved
        report.missing_positive = 0;
    }
    report.rows = fs.n_rows();
    Ok((fs, report))
}

/// Seeded split of `n_rows` into sorted `(train, test)` row lists. Stream
/// `stream` of the seed is used, so subsets split independently.
pub fn split_rows(n_rows: usize, split: f64, seed: u64, stream: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng);
    let n_test = if n_rows < 2 {
        0
    } else {
        ((split * n_rows as f64).ceil() as usize).min(n_rows - 1)
    };
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub scaler: FeatureScaler,
    pub model: SvrModel,
}

impl Member {
    /// Score of one `[query | passage]` pair.
    pub fn score(&self, q: &[f32], p: &[f32], buf: &mut Vec<f32>) -> f64 {
        buf.clear();
        concat_into(buf, q, p);
        self.scaler
            .transform_in_place(buf)
            .expect("member width matches 2 * dim");
        self.model.predict_unchecked(buf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub plan: BaggingPlan,
    pub members: Vec<Member>,
    pub config: TrainConfig,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberReport {
    pub subset: usize,
    pub subset_size: usize,
    pub build: BuildReport,
    pub train_rows: usize,
    pub test_rows: usize,
    pub n_support: usize,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    pub gamma: f64,
    pub test: Option<ClassificationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub queries_trained: usize,
    /// Judged queries with no embedding in the query set.
    pub queries_without_embedding: usize,
    pub members: Vec<MemberReport>,
    /// Over the pooled test rows of every member.
    pub test: Option<ClassificationReport>,
}

impl TrainReport {
    pub fn all_converged(&self) -> bool {
        self.members.iter().all(|m| m.converged)
    }
}

pub fn train_ensemble(
    m: &EmbeddingMatrix,
    index: &CorpusIndex,
    queries: &QuerySet,
    qrels: &RelevanceJudgments,
    cfg: &TrainConfig,
) -> Result<(EnsembleModel, TrainReport)> {
    cfg.validate()?;
    index.check_matrix(m)?;
    queries.check_dim(m)?;
    qrels.validate(index)?;

    let plan = bagging::make_plan(m.n_rows(), cfg.s, cfg.overlap, cfg.seed)?;
    let assignment = bagging::assign_queries(&plan, qrels, index)?;
    let mut per_subset: Vec<Vec<usize>> = vec![Vec::new(); plan.s];
    let mut trained = 0;
    for (qi, qid) in queries.query_ids.iter().enumerate() {
        if let Some(subsets) = assignment.get(qid) {
            trained += 1;
            for &j in subsets {
                per_subset[j].push(qi);
            }
        }
    }
    let without_embedding = qrels.n_queries() - trained;

    let results: Vec<(Member, MemberReport, Vec<f64>, Vec<f32>)> = (0..plan.s)
        .into_par_iter()
        .map(|j| {
            train_member(
                j,
                &plan.subsets[j],
                &per_subset[j],
                m,
                index,
                queries,
                qrels,
                cfg,
            )
        })
        .collect::<Result<_>>()?;

    let mut members = Vec::with_capacity(plan.s);
    let mut reports = Vec::with_capacity(plan.s);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (member, report, s, l) in results {
        members.push(member);
        reports.push(report);
        scores.extend(s);
        labels.extend(l);
    }
    let test = if scores.is_empty() {
        None
    } else {
        Some(metrics::classification_report(
            &scores,
            &labels,
            cfg.threshold,
        )?)
    };
    let report = TrainReport {
        config: cfg.clone(),
        queries_trained: trained,
        queries_without_embedding: without_embedding,
        members: reports,
        test,
    };
    let model = EnsembleModel {
        plan,
        members,
        config: cfg.clone(),
        format_version: FORMAT_VERSION,
    };
    Ok((model, report))
}

#[allow(clippy::too_many_arguments)]
fn train_member(
    j: usize,
    subset: &[usize],
    assigned: &[usize],
    m: &EmbeddingMatrix,
    index: &CorpusIndex,
    queries: &QuerySet,
    qrels: &RelevanceJudgments,
    cfg: &TrainConfig,
) -> Result<(Member, MemberReport, Vec<f64>, Vec<f32>)> {
    let (fs, build) = build_training_set(subset, assigned, m, index, queries, qrels, cfg)?;
    let width = 2 * m.dim();
    let (train, test) = split_rows(fs.n_rows(), cfg.split, cfg.seed, j as u64 + 1);

    let mut report = MemberReport {
        subset: j,
        subset_size: subset.len(),
        build,
        train_rows: train.len(),
        test_rows: test.len(),
        n_support: 0,
        iterations: 0,
        converged: true,
        kkt_violation: 0.0,
        gamma: 0.0,
        test: None,
    };
    if train.is_empty() {
        // nothing to learn from: a member that never fires
        let model = SvrModel::constant(width, 0.0, cfg.svr.clone())?;
        report.gamma = model.gamma;
        let member = Member {
            scaler: FeatureScaler::identity(width),
            model,
        };
        return Ok((member, report, Vec::new(), Vec::new()));
    }

    let scaler = match cfg.scaler_fit {
        ScalerFit::All => FeatureScaler::fit(&fs.features, width)?,
        ScalerFit::Train => FeatureScaler::fit(&fs.gather(&train).0, width)?,
    };
    let (mut x_train, y_train) = fs.gather(&train);
    scaler.transform_rows(&mut x_train)?;
    let y_train: Vec<f64> = y_train.iter().map(|&v| f64::from(v)).collect();
    let (model, summary) = svr::train_svr(&x_train, width, &y_train, &cfg.svr)?;

    report.n_support = summary.n_support;
    report.iterations = summary.iterations;
    report.converged = summary.converged;
    report.kkt_violation = svr::kkt_violation(&model, &x_train, &y_train);
    report.gamma = summary.gamma;

    let (mut x_test, y_test) = fs.gather(&test);
    let mut scores = Vec::with_capacity(test.len());
    if !test.is_empty() {
        scaler.transform_rows(&mut x_test)?;
        scores = x_test
            .chunks_exact(width)
            .map(|r| model.predict_unchecked(r))
            .collect();
        report.test = Some(metrics::classification_report(
            &scores,
            &y_test,
            cfg.threshold,
        )?);
    }
    Ok((Member { scaler, model }, report, scores, y_test))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrieveOptions {
    pub threshold: f64,
    pub k: usize,
}

impl RetrieveOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            threshold: cfg.threshold,
            k: cfg.inference_k(),
        }
    }
}

/// A scored candidate passage after max-deduplication across members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub row: usize,
    pub score: f64,
    pub positive: bool,
}

impl EnsembleModel {
    pub fn metric(&self) -> Result<Arc<dyn DistanceMetric>> {
        knn::metric(&self.config.metric)
    }

    /// Per-member scores of `q`'s neighbors: `out[j]` lists `(row, score)`
    /// for member `j` in neighbor order.
    pub fn member_scores(
        &self,
        m: &EmbeddingMatrix,
        q: &[f32],
        k: usize,
    ) -> Result<Vec<Vec<(usize, f64)>>> {
        let metric = self.metric()?;
        let mut buf = Vec::with_capacity(2 * m.dim());
        self.plan
            .subsets
            .iter()
            .zip(&self.members)
            .map(|(subset, member)| {
                let neighbors = knn::top_k(m, subset, q, k, metric.as_ref())?;
                Ok(neighbors
                    .iter()
                    .map(|n| (n.row_index, member.score(q, m.row(n.row_index), &mut buf)))
                    .collect())
            })
            .collect()
    }

    /// Candidates for one query: every member scores its own neighbors, each
    /// passage keeps its best score, and it is positive when that score
    /// reaches the threshold (equivalently, when any member votes for it).
    pub fn retrieve(
        &self,
        m: &EmbeddingMatrix,
        q: &[f32],
        opts: &RetrieveOptions,
    ) -> Result<Vec<Candidate>> {
        if q.len() != m.dim() {
            return Err(Error::DimMismatch {
                expected: m.dim(),
                found: q.len(),
            });
        }
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for scores in self.member_scores(m, q, opts.k)? {
            for (row, score) in scores {
                best.entry(row)
                    .and_modify(|s| *s = s.max(score))
                    .or_insert(score);
            }
        }
        Ok(best
            .into_iter()
            .map(|(row, score)| Candidate {
                row,
                score,
                positive: score >= opts.threshold,
            })
            .collect())
    }

    pub fn retrieve_query(
        &self,
        m: &EmbeddingMatrix,
        index: &CorpusIndex,
        query_id: &str,
        q: &[f32],
        opts: &RetrieveOptions,
    ) -> Result<QueryRun> {
        let scored = self
            .retrieve(m, q, opts)?
            .into_iter()
            .map(|c| (index.passage_id(c.row).to_string(), c.score, c.positive))
            .collect();
        Ok(QueryRun::ranked(query_id.to_string(), scored))
    }

    /// Runs every query, parallel over queries, output in query order.
    pub fn retrieve_all(
        &self,
        m: &EmbeddingMatrix,
        index: &CorpusIndex,
        queries: &QuerySet,
        opts: &RetrieveOptions,
    ) -> Result<RunFile> {
        index.check_matrix(m)?;
        queries.check_dim(m)?;
        if self.plan.n_passages != m.n_rows() {
            return Err(Error::LengthMismatch {
                expected: self.plan.n_passages,
                found: m.n_rows(),
            });
        }
        let runs = (0..queries.len())
            .into_par_iter()
            .map(|i| {
                self.retrieve_query(m, index, &queries.query_ids[i], queries.embedding(i), opts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RunFile { queries: runs })
    }
}
