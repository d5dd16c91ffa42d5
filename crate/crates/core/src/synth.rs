//! Seeded synthetic benchmark with golden, misleading and irrelevant documents.
//!
//! Every query owns a handful of pseudo-word content tokens and a two-word
//! answer. Golden documents mention most of the query tokens once inside long
//! passages and together hold the answer. Misleading documents are short and
//! repeat query tokens, which pushes their BM25 score up, and carry a
//! distractor answer that shares no token with the gold answer. Irrelevant
//! documents mention a single query token.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocLabel, Document, Query};
use crate::error::{arg_err, Result};
use crate::rng::{stream, StreamRng};

/// How strongly a query's misleading documents imitate the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LureLevel {
    /// Distinct query tokens per misleading document.
    pub overlap: usize,
    /// Occurrences of each of those tokens.
    pub repeats: usize,
    /// Filler words per misleading document.
    pub filler: usize,
    /// Relative frequency of this level across queries.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub golden: usize,
    pub misleading: usize,
    pub irrelevant: usize,
    pub query_tokens: usize,
    pub golden_overlap: usize,
    pub golden_filler: usize,
    pub irrelevant_overlap: usize,
    pub irrelevant_filler: usize,
    pub filler_vocab: usize,
    pub lure_levels: Vec<LureLevel>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            golden: 2,
            misleading: 3,
            irrelevant: 20,
            query_tokens: 6,
            golden_overlap: 4,
            golden_filler: 40,
            irrelevant_overlap: 1,
            irrelevant_filler: 30,
            filler_vocab: 400,
            lure_levels: vec![
                LureLevel {
                    overlap: 2,
                    repeats: 3,
                    filler: 8,
                    weight: 1.0,
                },
                LureLevel {
                    overlap: 3,
                    repeats: 3,
                    filler: 8,
                    weight: 1.0,
                },
            ],
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.golden) {
            return Err(arg_err(format!("golden documents per query must be 1 or 2, got {}", self.golden)));
        }
        if self.query_tokens == 0 {
            return Err(arg_err("queries need at least one content token"));
        }
        let too_many = |what: &str, k: usize| {
            arg_err(format!("{what} overlap {k} exceeds {} query tokens", self.query_tokens))
        };
        if self.golden_overlap > self.query_tokens {
            return Err(too_many("golden", self.golden_overlap));
        }
        if self.irrelevant_overlap > self.query_tokens {
            return Err(too_many("irrelevant", self.irrelevant_overlap));
        }
        if self.misleading > 0 {
            if self.lure_levels.is_empty() {
                return Err(arg_err("misleading documents need at least one lure level"));
            }
            for l in &self.lure_levels {
                if l.overlap > self.query_tokens {
                    return Err(too_many("lure", l.overlap));
                }
                if !(l.weight >= 0.0) {
                    return Err(arg_err("lure weights must be nonnegative"));
                }
            }
            if self.lure_levels.iter().all(|l| l.weight == 0.0) {
                return Err(arg_err("lure weights sum to zero"));
            }
        }
        if self.filler_vocab == 0 {
            return Err(arg_err("filler vocabulary must be nonempty"));
        }
        Ok(())
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut StreamRng, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(VOWELS.choose(rng).unwrap());
            }
            if rng.random_bool(0.5) {
                w.push_str(["n", "r", "s", "x"].choose(rng).unwrap());
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn pick<'a>(rng: &mut StreamRng, from: &'a [String], k: usize) -> Vec<&'a String> {
    from.choose_multiple(rng, k).collect()
}

fn passage(rng: &mut StreamRng, mut tokens: Vec<String>) -> String {
    tokens.shuffle(rng);
    tokens.join(" ")
}

/// Deterministic corpus for `(seed, n_queries, spec)`.
pub fn generate_synthetic_benchmark(seed: u64, n_queries: i64, spec: &BenchmarkSpec) -> Result<Corpus> {
    if n_queries <= 0 {
        return Err(arg_err(format!("n_queries must be positive, got {n_queries}")));
    }
    spec.validate()?;
    let mut rng = stream(seed, &["synthetic-benchmark"]);
    let mut words = Words { used: HashSet::new() };
    let filler: Vec<String> = (0..spec.filler_vocab).map(|_| words.fresh(&mut rng, 2)).collect();
    let lure_weights: Vec<f64> = spec.lure_levels.iter().map(|l| l.weight).collect();

    let mut documents = Vec::new();
    let mut queries = Vec::new();
    let per_query = spec.golden + spec.misleading + spec.irrelevant;

    for q in 0..n_queries as usize {
        let q_tokens: Vec<String> = (0..spec.query_tokens).map(|_| words.fresh(&mut rng, 3)).collect();
        let answer: Vec<String> = (0..2).map(|_| words.fresh(&mut rng, 3)).collect();
        let gold = answer.join(" ");

        let mut slots: Vec<usize> = (0..per_query).collect();
        slots.shuffle(&mut rng);
        let mut slot = slots.into_iter();
        let mut next_id = || format!("d{q:05}-{:02}", slot.next().unwrap());
        let fill = |rng: &mut StreamRng, n: usize| -> Vec<String> { (0..n).map(|_| filler.choose(rng).unwrap().clone()).collect() };

        let mut golden_ids = Vec::new();
        for g in 0..spec.golden {
            let span = if spec.golden == 1 { gold.clone() } else { answer[g].clone() };
            let mut toks: Vec<String> = pick(&mut rng, &q_tokens, spec.golden_overlap).into_iter().cloned().collect();
            toks.extend(span.split(' ').map(String::from));
            toks.extend(fill(&mut rng, spec.golden_filler));
            let id = next_id();
            golden_ids.push(id.clone());
            documents.push(Document {
                id,
                title: filler.choose(&mut rng).unwrap().clone(),
                text: passage(&mut rng, toks),
                label: DocLabel::Golden,
                answer_span: Some(span),
            });
        }

        if spec.misleading > 0 {
            let level = &spec.lure_levels[pick_weighted(&mut rng, &lure_weights)];
            for _ in 0..spec.misleading {
                let distractor: Vec<String> = (0..2).map(|_| words.fresh(&mut rng, 3)).collect();
                let mut toks = Vec::new();
                for t in pick(&mut rng, &q_tokens, level.overlap) {
                    toks.extend(std::iter::repeat_n(t.clone(), level.repeats));
                }
                toks.extend(distractor.iter().cloned());
                toks.extend(fill(&mut rng, level.filler));
                documents.push(Document {
                    id: next_id(),
                    title: filler.choose(&mut rng).unwrap().clone(),
                    text: passage(&mut rng, toks),
                    label: DocLabel::Misleading,
                    answer_span: Some(distractor.join(" ")),
                });
            }
        }

        for _ in 0..spec.irrelevant {
            let mut toks: Vec<String> = pick(&mut rng, &q_tokens, spec.irrelevant_overlap).into_iter().cloned().collect();
            toks.extend(fill(&mut rng, spec.irrelevant_filler));
            documents.push(Document {
                id: next_id(),
                title: filler.choose(&mut rng).unwrap().clone(),
                text: passage(&mut rng, toks),
                label: DocLabel::Irrelevant,
                answer_span: None,
            });
        }

        queries.push(Query {
            id: format!("q{q:05}"),
            text: q_tokens.join(" "),
            gold_answers: vec![gold],
            required_golden_ids: golden_ids,
        });
    }
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    Corpus::new(documents, queries)
}

fn pick_weighted(rng: &mut StreamRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}
