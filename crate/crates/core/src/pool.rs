//! Per-query candidate pools: the top-n documents of an initial retriever.

use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;
use crate::corpus::{Corpus, DenseScores, Query};
use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked candidates for one query; descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: String,
    pub entries: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id)
    }
}

fn rank(query_id: &str, mut scored: Vec<PoolEntry>, n: usize) -> CandidatePool {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    scored.truncate(n);
    CandidatePool {
        query_id: query_id.to_owned(),
        entries: scored,
    }
}

/// Top-`n` documents of the corpus under BM25.
pub fn build_candidate_pool(query: &Query, corpus: &Corpus, index: &Bm25Index, n: usize) -> Result<CandidatePool> {
    if n == 0 {
        return Err(arg_err("pool size must be at least 1"));
    }
    if corpus.documents().is_empty() {
        return Err(arg_err("cannot build a pool over an empty corpus"));
    }
    let scores = index.score_all(&query.text)?;
    let scored = corpus
        .documents()
        .iter()
        .zip(scores)
        .map(|(d, score)| PoolEntry {
            doc_id: d.id.clone(),
            score,
        })
        .collect();
    Ok(rank(&query.id, scored, n))
}

/// Pool from precomputed dense-retriever scores. Unknown doc ids are errors.
pub fn pool_from_dense(query: &Query, corpus: &Corpus, dense: &DenseScores, n: usize) -> Result<CandidatePool> {
    if n == 0 {
        return Err(arg_err("pool size must be at least 1"));
    }
    let triples = dense.for_query(&query.id);
    if triples.is_empty() {
        return Err(Error::Retrieval(format!("no dense scores for query `{}`", query.id)));
    }
    let mut seen = std::collections::HashSet::new();
    let mut scored = Vec::with_capacity(triples.len());
    let mut missing = Vec::new();
    for (doc_id, score) in triples {
        if corpus.document(doc_id).is_none() {
            missing.push(doc_id.clone());
            continue;
        }
        if seen.insert(doc_id.as_str()) {
            scored.push(PoolEntry {
                doc_id: doc_id.clone(),
                score: *score,
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Integrity(missing));
    }
    Ok(rank(&query.id, scored, n))
}
