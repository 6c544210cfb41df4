//! Ranked retrieval output and the TREC run text format
//! (`query_id Q0 passage_id rank score tag`).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub query_id: String,
    pub entries: Vec<RunEntry>,
}

/// Score descending, then id ascending.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl QueryRun {
    /// Sorts `(id, score, positive)` triples into rank order and numbers them.
    pub fn ranked(query_id: String, mut scored: Vec<(String, f64, bool)>) -> Self {
        scored.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (id, score, positive))| RunEntry {
                id,
                score,
                rank: i + 1,
                positive,
            })
            .collect();
        Self { query_id, entries }
    }

    pub fn positives(&self) -> impl Iterator<Item = &RunEntry> {
        self.entries.iter().filter(|e| e.positive)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub queries: Vec<QueryRun>,
}

impl RunFile {
    pub fn get(&self, query_id: &str) -> Option<&QueryRun> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    pub fn n_entries(&self) -> usize {
        self.queries.iter().map(|q| q.entries.len()).sum()
    }

    /// Scores are written with the shortest representation that parses back
    /// to the same `f64`.
    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for q in &self.queries {
            for e in &q.entries {
                writeln!(
                    out,
                    "{} Q0 {} {} {} {}",
                    q.query_id, e.id, e.rank, e.score, tag
                )
                .unwrap();
            }
        }
        out
    }

    pub fn save_trec(&self, path: impl AsRef<Path>, tag: &str) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_trec(tag)).map_err(|e| Error::io(path, e))
    }
}

/// Parses a TREC run. With a threshold, entries scoring at or above it are
/// positive; without one every listed entry is.
pub fn parse_trec(text: &str, threshold: Option<f64>) -> Result<RunFile> {
    let mut queries: Vec<QueryRun> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let malformed = |reason: &str| Error::MalformedLine {
            line: i + 1,
            reason: reason.to_string(),
        };
        if cols.len() != 6 {
            return Err(malformed("expected 6 space-separated columns"));
        }
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| malformed("rank is not an integer"))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| malformed("score is not a number"))?;
        if !score.is_finite() {
            return Err(malformed("score is not finite"));
        }
        let entry = RunEntry {
            id: cols[2].to_string(),
            score,
            rank,
            positive: threshold.is_none_or(|t| score >= t),
        };
        match queries.last_mut() {
            Some(q) if q.query_id == cols[0] => q.entries.push(entry),
            _ => {
                if queries.iter().any(|q| q.query_id == cols[0]) {
                    return Err(malformed("query lines are not contiguous"));
                }
                queries.push(QueryRun {
                    query_id: cols[0].to_string(),
                    entries: vec![entry],
                });
            }
        }
    }
    for q in &mut queries {
        q.entries.sort_by_key(|e| e.rank);
        for (i, e) in q.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::MalformedLine {
                    line: 0,
                    reason: format!("ranks for query {} are not 1..m", q.query_id),
                });
            }
        }
    }
    Ok(RunFile { queries })
}

pub fn load_trec(path: impl AsRef<Path>, threshold: Option<f64>) -> Result<RunFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trec(&text, threshold)
}
