//! Embedding storage, identifier maps, relevance judgments and their on-disk
//! formats.
//!
//! Embeddings use the `EMB1` container: the ASCII magic `EMB1`, then `n_rows`
//! and `dim` as little-endian `u32`, then `n_rows * dim` little-endian `f32`
//! values in row-major order. Row identifiers live in a sidecar text file next
//! to the matrix (same stem, `.ids` extension), one id per line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::run::{QueryRun, RunFile};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const EMB_HEADER_LEN: usize = 12;

/// Dense row-major `f32` matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_rows * dim {
            return Err(Error::DimMismatch {
                expected: n_rows * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim.max(1),
                col: pos % dim.max(1),
            });
        }
        Ok(Self { n_rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.dim.max(1)).take(self.n_rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Encodes the matrix as an `EMB1` byte buffer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMB_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.n_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != EMB_MAGIC {
            return Err(Error::BadMagic { expected: "EMB1" });
        }
        if bytes.len() < EMB_HEADER_LEN {
            return Err(Error::DimMismatch {
                expected: EMB_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let n_rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[EMB_HEADER_LEN..];
        let expected = n_rows * dim * 4;
        if payload.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n_rows, dim, data)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Sidecar id file for an embedding file: same stem, `.ids` extension.
pub fn ids_path(embeddings: impl AsRef<Path>) -> PathBuf {
    embeddings.as_ref().with_extension("ids")
}

pub fn load_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn save_ids(ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(ids.iter().map(|s| s.len() + 1).sum());
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Passage ids in matrix row order plus the passage → document mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    passage_ids: Vec<String>,
    documents: Vec<String>,
    rows: HashMap<String, usize>,
}

impl CorpusIndex {
    /// Index with the identity passage → document map.
    pub fn new(passage_ids: Vec<String>) -> Result<Self> {
        let documents = passage_ids.clone();
        Self::build(passage_ids, documents)
    }

    /// Index with an explicit document map. Passages absent from the map are
    /// their own document.
    pub fn with_documents(
        passage_ids: Vec<String>,
        passage_to_doc: &HashMap<String, String>,
    ) -> Result<Self> {
        let documents = passage_ids
            .iter()
            .map(|p| passage_to_doc.get(p).cloned().unwrap_or_else(|| p.clone()))
            .collect();
        let index = Self::build(passage_ids, documents)?;
        if let Some(pid) = passage_to_doc.keys().find(|p| !index.rows.contains_key(*p)) {
            return Err(Error::UnknownId(pid.clone()));
        }
        Ok(index)
    }

    fn build(passage_ids: Vec<String>, documents: Vec<String>) -> Result<Self> {
        let mut rows = HashMap::with_capacity(passage_ids.len());
        for (i, id) in passage_ids.iter().enumerate() {
            if rows.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            passage_ids,
            documents,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage_ids.is_empty()
    }

    pub fn passage_id(&self, row: usize) -> &str {
        &self.passage_ids[row]
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn row_of(&self, passage_id: &str) -> Option<usize> {
        self.rows.get(passage_id).copied()
    }

    pub fn document_of(&self, passage_id: &str) -> Option<&str> {
        self.row_of(passage_id).map(|r| self.documents[r].as_str())
    }

    /// Checks that the index lines up with an embedding matrix.
    pub fn check_matrix(&self, m: &EmbeddingMatrix) -> Result<()> {
        if self.len() != m.n_rows() {
            return Err(Error::LengthMismatch {
                expected: m.n_rows(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Reads a `passage_id<TAB>document_id` map.
pub fn load_docmap(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::MalformedLine {
                line: i + 1,
                reason: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        map.insert(cols[0].to_string(), cols[1].to_string());
    }
    Ok(map)
}

/// Query ids with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub query_ids: Vec<String>,
    pub embeddings: EmbeddingMatrix,
}

impl QuerySet {
    pub fn new(query_ids: Vec<String>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if query_ids.len() != embeddings.n_rows() {
            return Err(Error::LengthMismatch {
                expected: embeddings.n_rows(),
                found: query_ids.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for id in &query_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            query_ids,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.query_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_ids.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        self.embeddings.row(i)
    }

    pub fn position(&self, query_id: &str) -> Option<usize> {
        self.query_ids.iter().position(|q| q == query_id)
    }

    pub fn check_dim(&self, collection: &EmbeddingMatrix) -> Result<()> {
        if self.embeddings.dim() != collection.dim() {
            return Err(Error::DimMismatch {
                expected: collection.dim(),
                found: self.embeddings.dim(),
            });
        }
        Ok(())
    }
}

/// Loads an `EMB1` file plus its `.ids` sidecar as a query set.
pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let embeddings = load_embeddings(path)?;
    let ids = load_ids(ids_path(path))?;
    QuerySet::new(ids, embeddings)
}

/// Query id → set of relevant passage ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceJudgments {
    judgments: BTreeMap<String, BTreeSet<String>>,
}

impl RelevanceJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into());
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.judgments.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.judgments.iter()
    }

    pub fn n_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn n_relevant(&self) -> usize {
        self.judgments.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Rejects judgments that reference passages outside the index.
    pub fn validate(&self, index: &CorpusIndex) -> Result<()> {
        for pid in self.judgments.values().flatten() {
            if index.row_of(pid).is_none() {
                return Err(Error::UnknownId(pid.clone()));
            }
        }
        Ok(())
    }

    /// Row indices of the relevant passages of one query.
    pub fn relevant_rows(&self, query_id: &str, index: &CorpusIndex) -> Result<Vec<usize>> {
        let rel = self
            .relevant(query_id)
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
        rel.iter()
            .map(|p| index.row_of(p).ok_or_else(|| Error::UnknownId(p.clone())))
            .collect()
    }

    /// Lifts passage judgments to document judgments.
    pub fn to_documents(&self, index: &CorpusIndex) -> Result<Self> {
        let mut out = Self::new();
        for (q, rel) in &self.judgments {
            for p in rel {
                let doc = index
                    .document_of(p)
                    .ok_or_else(|| Error::UnknownId(p.clone()))?;
                out.insert(q.clone(), doc);
            }
        }
        Ok(out)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, rel) in &self.judgments {
            for p in rel {
                out.push_str(q);
                out.push('\t');
                out.push_str(p);
                out.push('\n');
            }
        }
        out
    }
}

pub fn parse_qrels(text: &str) -> Result<RelevanceJudgments> {
    let mut qrels = RelevanceJudgments::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::MalformedLine {
                line: i + 1,
                reason: format!("expected query_id<TAB>passage_id, got {line:?}"),
            });
        }
        qrels.insert(cols[0], cols[1]);
    }
    if qrels.is_empty() {
        return Err(Error::EmptyJudgments);
    }
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<RelevanceJudgments> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text)
}

pub fn save_qrels(qrels: &RelevanceJudgments, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, qrels.to_tsv()).map_err(|e| Error::io(path, e))
}

/// Collapses a passage run into a document run: each passage id becomes its
/// document id, only the best-scoring entry per document survives, and ranks
/// are recomputed.
pub fn to_document_run(run: &RunFile, index: &CorpusIndex) -> Result<RunFile> {
    let mut queries = Vec::with_capacity(run.queries.len());
    for qr in &run.queries {
        let mut best: HashMap<&str, (f64, bool)> = HashMap::new();
        for entry in &qr.entries {
            let doc = index
                .document_of(&entry.id)
                .ok_or_else(|| Error::UnknownId(entry.id.clone()))?;
            best.entry(doc)
                .and_modify(|(score, positive)| {
                    if entry.score > *score {
                        *score = entry.score;
                    }
                    *positive |= entry.positive;
                })
                .or_insert((entry.score, entry.positive));
        }
        let scored = best
            .into_iter()
            .map(|(doc, (score, positive))| (doc.to_string(), score, positive))
            .collect();
        queries.push(QueryRun::ranked(qr.query_id.clone(), scored));
    }
    Ok(RunFile { queries })
}
