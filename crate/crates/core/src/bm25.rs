//! Okapi BM25 over a tokenized corpus.
//!
//! score(D, Q) = Σ_{t ∈ distinct(Q)} idf(t) · tf(t,D)·(k1+1) / (tf(t,D) + k1·(1 − b + b·|D|/avgdl))
//! with the non-negative idf(t) = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5)).

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Term frequencies and length of one document.
#[derive(Debug, Clone, Default)]
pub struct DocTerms {
    pub tf: HashMap<String, u32>,
    pub len: usize,
}

impl DocTerms {
    pub fn from_tokens(tokens: &[String]) -> Self {
        let mut tf = HashMap::new();
        for t in tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        DocTerms { tf, len: tokens.len() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_doc_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// BM25 score of one document. Repeated query tokens count once.
pub fn bm25_score(query_tokens: &[String], doc: &DocTerms, stats: &CorpusStats, params: Bm25Params) -> Result<f64> {
    if query_tokens.is_empty() {
        return Err(Error::Retrieval("query has no tokens".into()));
    }
    let distinct: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
    let norm = if stats.avg_doc_len > 0.0 {
        1.0 - params.b + params.b * doc.len as f64 / stats.avg_doc_len
    } else {
        1.0
    };
    let mut score = 0.0;
    for term in distinct {
        let Some(&tf) = doc.tf.get(term) else { continue };
        let tf = tf as f64;
        score += stats.idf(term) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
    }
    Ok(score)
}

/// Per-document term tables plus collection statistics for a whole corpus.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    pub params: Bm25Params,
    pub stats: CorpusStats,
    docs: Vec<DocTerms>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Self {
        let docs: Vec<DocTerms> = corpus
            .documents()
            .iter()
            .map(|d| DocTerms::from_tokens(&tokenize(&d.full_text())))
            .collect();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut total_len = 0usize;
        for d in &docs {
            total_len += d.len;
            for term in d.tf.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
        }
        let n_docs = docs.len();
        let avg_doc_len = if n_docs == 0 { 0.0 } else { total_len as f64 / n_docs as f64 };
        Bm25Index {
            params,
            stats: CorpusStats { n_docs, avg_doc_len, doc_freq },
            docs,
        }
    }

    pub fn doc_terms(&self, doc_index: usize) -> &DocTerms {
        &self.docs[doc_index]
    }

    /// Scores of every document, in corpus order.
    pub fn score_all(&self, query_text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(query_text);
        self.docs
            .iter()
            .map(|d| bm25_score(&tokens, d, &self.stats, self.params))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn absent_token_scores_zero() {
        let doc = DocTerms::from_tokens(&toks("alpha beta"));
        let stats = CorpusStats {
            n_docs: 1,
            avg_doc_len: 2.0,
            doc_freq: [("alpha".to_string(), 1), ("beta".to_string(), 1)].into(),
        };
        assert_eq!(bm25_score(&toks("gamma"), &doc, &stats, Bm25Params::default()).unwrap(), 0.0);
    }

    #[test]
    fn single_doc_matches_hand_value() {
        // one doc "alpha beta alpha", query = the doc text.
        // avgdl = 3 = |D| so the length norm is 1.
        // idf = ln(1 + 0.5/1.5) = ln(4/3) for both terms.
        // alpha: tf=2 → 2·2.2/(2+1.2) = 1.375; beta: tf=1 → 2.2/2.2 = 1.
        let tokens = toks("alpha beta alpha");
        let doc = DocTerms::from_tokens(&tokens);
        let stats = CorpusStats {
            n_docs: 1,
            avg_doc_len: 3.0,
            doc_freq: [("alpha".to_string(), 1), ("beta".to_string(), 1)].into(),
        };
        let expected = (4.0f64 / 3.0).ln() * (1.375 + 1.0);
        let got = bm25_score(&tokens, &doc, &stats, Bm25Params::default()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn tf_monotone_in_linear_limit() {
        let stats = CorpusStats {
            n_docs: 10,
            avg_doc_len: 4.0,
            doc_freq: [("x".to_string(), 2)].into(),
        };
        let params = Bm25Params { k1: 1e9, b: 0.0 };
        let mut prev = 0.0;
        for tf in [1u32, 2, 4, 8, 16] {
            let doc = DocTerms {
                tf: [("x".to_string(), tf)].into(),
                len: 4,
            };
            let s = bm25_score(&toks("x"), &doc, &stats, params).unwrap();
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn empty_query_is_error() {
        let doc = DocTerms::default();
        let stats = CorpusStats::default();
        assert!(matches!(
            bm25_score(&toks("  ,, "), &doc, &stats, Bm25Params::default()),
            Err(Error::Retrieval(_))
        ));
    }
}
