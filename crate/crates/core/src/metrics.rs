//! Retrieval metrics over run files and row-level classification reports.
//!
//! Relevance is binary. Queries judged in the qrels but absent from the run
//! count as complete misses; a run query without judgments is an error.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::RelevanceJudgments;
use crate::error::{Error, Result};
use crate::run::{QueryRun, RunFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Passage,
    Document,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Passage => "passage",
            Mode::Document => "document",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passage" | "P" => Ok(Mode::Passage),
            "document" | "D" => Ok(Mode::Document),
            _ => Err(Error::InvalidParams(format!(
                "mode must be passage or document, got {s:?}"
            ))),
        }
    }
}

/// Run queries by id, after checking each one is judged.
fn check_queries<'r>(
    run: &'r RunFile,
    qrels: &RelevanceJudgments,
) -> Result<HashMap<&'r str, &'r QueryRun>> {
    let mut by_id = HashMap::with_capacity(run.queries.len());
    for q in &run.queries {
        if qrels.relevant(&q.query_id).is_none() {
            return Err(Error::UnknownQuery(q.query_id.clone()));
        }
        by_id.insert(q.query_id.as_str(), q);
    }
    Ok(by_id)
}

/// Distinct relevant ids among the positive entries ranked at or above `cutoff`.
fn positive_hits(qr: Option<&QueryRun>, rel: &BTreeSet<String>, cutoff: Option<usize>) -> usize {
    let Some(qr) = qr else { return 0 };
    let limit = cutoff.unwrap_or(usize::MAX);
    qr.positives()
        .filter(|e| e.rank <= limit && rel.contains(&e.id))
        .map(|e| e.id.as_str())
        .collect::<HashSet<_>>()
        .len()
}

/// Micro-averaged recall of the run's positive set: relevant items retrieved
/// over all relevant items. `cutoff` truncates by rank before counting.
pub fn recall_eval(
    run: &RunFile,
    qrels: &RelevanceJudgments,
    cutoff: Option<usize>,
) -> Result<f64> {
    let runs = check_queries(run, qrels)?;
    let total = qrels.n_relevant();
    if total == 0 {
        return Err(Error::EmptyJudgments);
    }
    let hits: usize = qrels
        .iter()
        .map(|(qid, rel)| positive_hits(runs.get(qid.as_str()).copied(), rel, cutoff))
        .sum();
    Ok(hits as f64 / total as f64)
}

/// Fraction of judged queries with at least one relevant positive.
pub fn hit_rate(run: &RunFile, qrels: &RelevanceJudgments, cutoff: Option<usize>) -> Result<f64> {
    let runs = check_queries(run, qrels)?;
    if qrels.is_empty() {
        return Err(Error::EmptyJudgments);
    }
    let hits = qrels
        .iter()
        .filter(|(qid, rel)| positive_hits(runs.get(qid.as_str()).copied(), rel, cutoff) > 0)
        .count();
    Ok(hits as f64 / qrels.n_queries() as f64)
}

/// Mean reciprocal rank of the first relevant entry within `cutoff`.
pub fn mrr_at(run: &RunFile, qrels: &RelevanceJudgments, cutoff: usize) -> Result<f64> {
    let runs = check_queries(run, qrels)?;
    if qrels.is_empty() {
        return Err(Error::EmptyJudgments);
    }
    let sum: f64 = qrels
        .iter()
        .map(|(qid, rel)| {
            runs.get(qid.as_str())
                .copied()
                .and_then(|qr| {
                    qr.entries
                        .iter()
                        .take_while(|e| e.rank <= cutoff)
                        .find(|e| rel.contains(&e.id))
                })
                .map_or(0.0, |e| 1.0 / e.rank as f64)
        })
        .sum();
    Ok(sum / qrels.n_queries() as f64)
}

/// nDCG with binary gains and `1 / log2(rank + 1)` discounts.
pub fn ndcg_at(run: &RunFile, qrels: &RelevanceJudgments, cutoff: usize) -> Result<f64> {
    let runs = check_queries(run, qrels)?;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut sum = 0.0;
    let mut judged = 0usize;
    for (qid, rel) in qrels.iter() {
        if rel.is_empty() {
            continue;
        }
        judged += 1;
        let ideal: f64 = (1..=rel.len().min(cutoff)).map(discount).sum();
        let mut seen = HashSet::new();
        let dcg: f64 = runs.get(qid.as_str()).copied().map_or(0.0, |qr| {
            qr.entries
                .iter()
                .take_while(|e| e.rank <= cutoff)
                .filter(|e| rel.contains(&e.id) && seen.insert(e.id.as_str()))
                .map(|e| discount(e.rank))
                .sum()
        });
        sum += dcg / ideal;
    }
    if judged == 0 {
        return Err(Error::EmptyJudgments);
    }
    Ok(sum / judged as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub mode: Mode,
    pub n_queries: usize,
    /// Micro recall of the positive set, no cutoff.
    pub recall: f64,
    /// Per-query hit rate of the positive set, no cutoff.
    pub hit_rate: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr_at_10: f64,
    pub ndcg_at_20: f64,
}

pub fn evaluate(
    run: &RunFile,
    qrels: &RelevanceJudgments,
    mode: Mode,
    cutoffs: &[usize],
) -> Result<EvalResult> {
    let mut recall_at = BTreeMap::new();
    for &k in cutoffs {
        recall_at.insert(k, recall_eval(run, qrels, Some(k))?);
    }
    Ok(EvalResult {
        mode,
        n_queries: qrels.n_queries(),
        recall: recall_eval(run, qrels, None)?,
        hit_rate: hit_rate(run, qrels, None)?,
        recall_at,
        mrr_at_10: mrr_at(run, qrels, 10)?,
        ndcg_at_20: ndcg_at(run, qrels, 20)?,
    })
}

impl EvalResult {
    pub fn to_tsv(&self) -> String {
        let mut head = vec![
            "mode".to_string(),
            "queries".into(),
            "MRR@10".into(),
            "nDCG@20".into(),
        ];
        let mut row = vec![
            self.mode.to_string(),
            self.n_queries.to_string(),
            format!("{:.4}", self.mrr_at_10),
            format!("{:.4}", self.ndcg_at_20),
        ];
        for (k, v) in &self.recall_at {
            head.push(format!("Recall@{k}"));
            row.push(format!("{v:.4}"));
        }
        head.push("Recall".into());
        row.push(format!("{:.4}", self.recall));
        head.push("HitRate".into());
        row.push(format!("{:.4}", self.hit_rate));
        format!("{}\n{}\n", head.join("\t"), row.join("\t"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    /// Index 0 is the negative class, 1 the positive.
    pub classes: [ClassMetrics; 2],
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    pub threshold: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Binary report with prediction `score >= threshold`; labels are 0 or 1.
pub fn classification_report(
    scores: &[f64],
    labels: &[f32],
    threshold: f64,
) -> Result<ClassificationReport> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    // confusion[truth][pred]
    let mut confusion = [[0usize; 2]; 2];
    for (&s, &l) in scores.iter().zip(labels) {
        let truth = usize::from(l >= 0.5);
        let pred = usize::from(s >= threshold);
        confusion[truth][pred] += 1;
    }
    let total = scores.len();
    let class = |c: usize| {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let support = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        ClassMetrics {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support,
        }
    };
    let classes = [class(0), class(1)];
    let avg = |w: [f64; 2]| ClassMetrics {
        precision: w[0] * classes[0].precision + w[1] * classes[1].precision,
        recall: w[0] * classes[0].recall + w[1] * classes[1].recall,
        f1: w[0] * classes[0].f1 + w[1] * classes[1].f1,
        support: total,
    };
    let weights = [
        ratio(classes[0].support, total),
        ratio(classes[1].support, total),
    ];
    Ok(ClassificationReport {
        classes,
        accuracy: ratio(confusion[0][0] + confusion[1][1], total),
        macro_avg: avg([0.5, 0.5]),
        weighted_avg: avg(weights),
        threshold,
    })
}

impl ClassificationReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "class\tprecision\trecall\tf1\tsupport").unwrap();
        let line = |out: &mut String, name: &str, m: &ClassMetrics| {
            writeln!(
                out,
                "{name}\t{:.4}\t{:.4}\t{:.4}\t{}",
                m.precision, m.recall, m.f1, m.support
            )
            .unwrap();
        };
        line(&mut out, "0", &self.classes[0]);
        line(&mut out, "1", &self.classes[1]);
        writeln!(
            out,
            "accuracy\t{:.4}\t\t\t{}",
            self.accuracy, self.macro_avg.support
        )
        .unwrap();
        line(&mut out, "macro avg", &self.macro_avg);
        line(&mut out, "weighted avg", &self.weighted_avg);
        out
    }
}
