#![allow(dead_code)]

use evsel_core::backend::QueryContext;
use evsel_core::config::RetrievalConfig;
use evsel_core::corpus::{DocLabel, Document, Query};
use evsel_core::pipeline::build_contexts;
use evsel_core::pool::{CandidatePool, PoolEntry};
use evsel_core::synth::{generate_synthetic_benchmark, BenchmarkSpec};

pub const GOLD: &str = "amber falcon";
pub const DISTRACTOR: &str = "granite otter";

/// One pooled document of a hand-built context.
pub struct Doc {
    pub id: &'static str,
    pub label: DocLabel,
    pub features: [f64; 4],
}

pub fn doc(id: &'static str, label: DocLabel, features: [f64; 4]) -> Doc {
    Doc { id, label, features }
}

/// A query context with explicit features, bypassing retrieval. Pool order is
/// the order of `docs`; the retrieval score is the first feature.
pub fn context(query_id: &str, required: &[&str], docs: &[Doc]) -> QueryContext {
    let documents = docs
        .iter()
        .map(|d| Document {
            id: d.id.to_owned(),
            title: d.id.to_owned(),
            text: format!("passage {}", d.id),
            label: d.label,
            answer_span: match d.label {
                DocLabel::Golden => Some(GOLD.to_owned()),
                DocLabel::Misleading => Some(DISTRACTOR.to_owned()),
                _ => None,
            },
        })
        .collect();
    QueryContext {
        query: Query {
            id: query_id.to_owned(),
            text: format!("question {query_id}"),
            gold_answers: vec![GOLD.to_owned()],
            required_golden_ids: required.iter().map(|s| s.to_string()).collect(),
        },
        pool: CandidatePool {
            query_id: query_id.to_owned(),
            entries: docs
                .iter()
                .map(|d| PoolEntry {
                    doc_id: d.id.to_owned(),
                    score: d.features[0],
                })
                .collect(),
        },
        features: docs.iter().map(|d| d.features.to_vec()).collect(),
        docs: documents,
    }
}

/// Two golden documents followed by `irrelevant` irrelevant ones, all with
/// identical features.
pub fn golden_pair_context(query_id: &str, irrelevant: usize) -> QueryContext {
    const IDS: [&str; 8] = ["i1", "i2", "i3", "i4", "i5", "i6", "i7", "i8"];
    let mut docs = vec![
        doc("g1", DocLabel::Golden, [0.5, 0.5, 0.5, 1.0]),
        doc("g2", DocLabel::Golden, [0.5, 0.5, 0.5, 1.0]),
    ];
    for id in &IDS[..irrelevant] {
        docs.push(doc(id, DocLabel::Irrelevant, [0.5, 0.5, 0.5, 1.0]));
    }
    context(query_id, &["g1", "g2"], &docs)
}

/// Contexts of a default synthetic benchmark under default retrieval.
pub fn synthetic(seed: u64, n_queries: i64) -> Vec<QueryContext> {
    let corpus = generate_synthetic_benchmark(seed, n_queries, &BenchmarkSpec::default()).unwrap();
    build_contexts(&corpus, &RetrievalConfig::default(), None).unwrap()
}

/// Probability of an ordered selection under sequential softmax, computed
/// directly from logits.
pub fn sequential_softmax_prob(logits: &[f64], order: &[usize]) -> f64 {
    let mut remaining: Vec<usize> = (0..logits.len()).collect();
    let mut p = 1.0;
    for &i in order {
        let z: f64 = remaining.iter().map(|&j| logits[j].exp()).sum();
        p *= logits[i].exp() / z;
        remaining.retain(|&j| j != i);
    }
    p
}

pub fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Every ordered `k`-subset of `0..n`, by nested enumeration.
pub fn orderings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).filter(|i| !prefix.contains(i)).map(|i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                }).collect::<Vec<_>>()
            })
            .collect();
    }
    out
}
