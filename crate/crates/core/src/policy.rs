//! Sequential-softmax policies over ordered subsets.
//!
//! An ordered selection `i_1, …, i_k` from `n` items with logits `l = X·w`
//! has probability Π_j softmax(l restricted to the items not yet chosen)[i_j].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{EvidenceSet, QueryContext};
use crate::corpus::{tokenize, Corpus, Query};
use crate::error::{arg_err, Error, Result};
use crate::pool::CandidatePool;
use crate::rng::StreamRng;

pub const FEATURE_NAMES: [&str; 4] = ["score", "overlap", "log_rank", "bias"];
const CHECKPOINT_MAGIC: &str = "EVSEL-POLICY";

/// One feature vector per candidate document.
pub type DocFeatures = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
    pub version: u64,
}

impl PolicyParams {
    /// Weights over the default feature basis.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::with_names(FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), weights)
    }

    pub fn with_names(feature_names: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if feature_names.len() != weights.len() {
            return Err(arg_err(format!(
                "{} weights for {} features",
                weights.len(),
                feature_names.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(arg_err(format!("non-finite weight {w}")));
        }
        Ok(PolicyParams {
            weights,
            feature_names,
            version: 0,
        })
    }

    pub fn zeros() -> Self {
        Self::new(vec![0.0; FEATURE_NAMES.len()]).expect("zero weights are valid")
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logits(&self, features: &[DocFeatures]) -> Vec<f64> {
        features
            .iter()
            .map(|x| x.iter().zip(&self.weights).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC}\nversion {}\nfeatures {}\n", self.version, self.feature_names.join(" "));
        for w in &self.weights {
            writeln!(out, "{w}").unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(1, format!("missing `{CHECKPOINT_MAGIC}` header")));
        }
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix("version "))
            .and_then(|v| v.trim().parse::<u64>().ok())
            .ok_or_else(|| bad(2, "expected `version <integer>`".into()))?;
        let names: Vec<String> = lines
            .next()
            .and_then(|l| l.strip_prefix("features"))
            .map(|l| l.split_whitespace().map(String::from).collect())
            .ok_or_else(|| bad(3, "expected `features <names…>`".into()))?;
        let mut weights = Vec::with_capacity(names.len());
        for (i, l) in lines.enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            let w = l
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(i + 4, format!("bad weight `{l}`: {e}")))?;
            weights.push(w);
        }
        let mut params = Self::with_names(names, weights).map_err(|e| bad(4, e.to_string()))?;
        params.version = version;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// Feature vectors aligned with the pool: [min-max rescaled score, fraction of
/// distinct query tokens present, ln(1 + rank), 1].
pub fn featurize(query: &Query, pool: &CandidatePool, corpus: &Corpus) -> Result<Vec<DocFeatures>> {
    if pool.is_empty() {
        return Err(arg_err(format!("empty candidate pool for query `{}`", query.id)));
    }
    let mut q_tokens = tokenize(&query.text);
    q_tokens.sort();
    q_tokens.dedup();
    let scores = pool.scores();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    pool.entries
        .iter()
        .enumerate()
        .map(|(rank, e)| {
            let doc = corpus
                .document(&e.doc_id)
                .ok_or_else(|| Error::Integrity(vec![e.doc_id.clone()]))?;
            let scaled = if hi > lo { (e.score - lo) / (hi - lo) } else { 1.0 };
            let overlap = if q_tokens.is_empty() {
                0.0
            } else {
                let d_tokens: std::collections::HashSet<String> = tokenize(&doc.full_text()).into_iter().collect();
                q_tokens.iter().filter(|t| d_tokens.contains(*t)).count() as f64 / q_tokens.len() as f64
            };
            Ok(vec![scaled, overlap, ((rank + 1) as f64).ln_1p(), 1.0])
        })
        .collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_indices(indices: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(arg_err(format!("index {i} out of range for {n} items")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(arg_err(format!("duplicate index {i}")));
        }
    }
    Ok(())
}

/// Draw `k` distinct indices sequentially from softmax over `logits`.
pub fn sample_from_logits(logits: &[f64], k: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    let n = logits.len();
    if k == 0 || k > n {
        return Err(arg_err(format!("cannot draw {k} of {n} items")));
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    let mut probs = Vec::with_capacity(n);
    for _ in 0..k {
        let m = remaining.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
        probs.clear();
        probs.extend(remaining.iter().map(|&i| (logits[i] - m).exp()));
        let total: f64 = probs.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = remaining.len() - 1;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = j;
                break;
            }
        }
        out.push(remaining.remove(pick));
    }
    Ok(out)
}

pub fn sample_subset(params: &PolicyParams, features: &[DocFeatures], k: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    sample_from_logits(&params.logits(features), k, rng)
}

/// Top-`k` by logit, ties to the lower index.
pub fn greedy_subset(params: &PolicyParams, features: &[DocFeatures], k: usize) -> Result<Vec<usize>> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(arg_err(format!("cannot take {k} of {n} items")));
    }
    let logits = params.logits(features);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

pub fn logprob_from_logits(logits: &[f64], indices: &[usize]) -> Result<f64> {
    check_indices(indices, logits.len())?;
    let mut taken = vec![false; logits.len()];
    let mut lp = 0.0;
    for &i in indices {
        let lse = log_sum_exp(
            logits
                .iter()
                .zip(&taken)
                .filter(|(_, t)| !**t)
                .map(|(l, _)| *l),
        );
        lp += logits[i] - lse;
        taken[i] = true;
    }
    Ok(lp)
}

pub fn logprob_subset(params: &PolicyParams, features: &[DocFeatures], indices: &[usize]) -> Result<f64> {
    logprob_from_logits(&params.logits(features), indices)
}

/// ∇_w log π(indices) = Σ_j [x_{i_j} − E_{softmax over remaining}[x]].
pub fn grad_logprob_subset(params: &PolicyParams, features: &[DocFeatures], indices: &[usize]) -> Result<Vec<f64>> {
    let logits = params.logits(features);
    check_indices(indices, logits.len())?;
    let d = params.dim();
    let mut grad = vec![0.0; d];
    let mut taken = vec![false; logits.len()];
    let mut weights = vec![0.0; logits.len()];
    for &i in indices {
        let m = logits
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, w) in weights.iter_mut().enumerate() {
            *w = if taken[j] { 0.0 } else { (logits[j] - m).exp() };
            z += *w;
        }
        for (g, xi) in grad.iter_mut().zip(&features[i]) {
            *g += xi;
        }
        for (j, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                let p = w / z;
                for (g, xj) in grad.iter_mut().zip(&features[j]) {
                    *g -= p * xj;
                }
            }
        }
        taken[i] = true;
    }
    Ok(grad)
}

/// Every ordered `k`-subset of `0..n`, in lexicographic order.
pub fn ordered_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, k: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(n, k, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(n, k, &mut Vec::with_capacity(k), &mut vec![false; n], &mut out);
    }
    out
}

/// Exact probability that a sampled grounding of `n_ground` documents from
/// the evidence set yields a correct simulated answer.
pub fn exact_solvability(ctx: &QueryContext, evidence: &EvidenceSet, gen_params: &PolicyParams, n_ground: usize) -> Result<f64> {
    if !ctx.is_labeled() {
        return Err(Error::Unsupported(
            "exact solvability needs a labeled corpus (simulator mode)".into(),
        ));
    }
    let s = evidence.positions.len();
    if n_ground == 0 || n_ground > s {
        return Err(arg_err(format!("cannot ground {n_ground} of {s} documents")));
    }
    let feats = ctx.evidence_features(evidence);
    let logits = gen_params.logits(&feats);
    let mut p = 0.0;
    for grounding in ordered_subsets(s, n_ground) {
        if ctx.grounding_correct(evidence, &grounding) {
            p += logprob_from_logits(&logits, &grounding)?.exp();
        }
    }
    Ok(p.clamp(0.0, 1.0))
}
