use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{EvidenceSet, GeneratorBackend, QueryContext, Rollout};
use crate::corpus::DocLabel;
use crate::error::{arg_err, Result};
use crate::metrics::normalize_answer;
use crate::policy::{sample_subset, PolicyParams};
use crate::reward::estimate_solvability;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub prediction: Option<String>,
    pub well_formed: bool,
    pub em: u8,
    pub f1: f64,
    /// Pool document ids cited by the generation, in citation order.
    pub cited_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub k: usize,
    /// Percentages in [0, 100].
    pub em: f64,
    pub f1: f64,
    /// Some pool held fewer than `k` documents.
    pub truncated: bool,
    pub per_query: Vec<QueryEval>,
}

fn query_eval(ctx: &QueryContext, evidence: &EvidenceSet, r: &Rollout) -> QueryEval {
    let cited_doc_ids = r
        .generation
        .citations
        .iter()
        .filter_map(|&c| evidence.positions.get(c.wrapping_sub(1)))
        .map(|&p| ctx.docs[p].id.clone())
        .collect();
    QueryEval {
        query_id: ctx.query.id.clone(),
        prediction: r.generation.answer.clone(),
        well_formed: r.generation.well_formed,
        em: r.reward.em,
        f1: r.reward.f1,
        cited_doc_ids,
    }
}

fn single_rollout(
    backend: &dyn GeneratorBackend,
    ctx: &QueryContext,
    evidence: &EvidenceSet,
    seed: u64,
    tag: &str,
) -> Result<Rollout> {
    let mut rng = stream(seed, &[&ctx.query.id, "eval", tag]);
    backend.rollout(ctx, evidence, &mut rng)
}

fn summarize(k: usize, per_query: Vec<QueryEval>, truncated: bool) -> EmResult {
    let n = per_query.len().max(1) as f64;
    EmResult {
        k,
        em: 100.0 * per_query.iter().map(|q| q.em as f64).sum::<f64>() / n,
        f1: 100.0 * per_query.iter().map(|q| q.f1).sum::<f64>() / n,
        truncated,
        per_query,
    }
}

/// EM and F1 of one generation per query on the raw top-`k` pool prefix.
pub fn evaluate_em(contexts: &[QueryContext], backend: &dyn GeneratorBackend, k: usize, seed: u64) -> Result<EmResult> {
    if k == 0 {
        return Err(arg_err("evaluation budget k must be at least 1"));
    }
    let per_query = contexts
        .par_iter()
        .map(|ctx| {
            let evidence = EvidenceSet::top_k(k, ctx.pool.len());
            let r = single_rollout(backend, ctx, &evidence, seed, &format!("top{k}"))?;
            Ok(query_eval(ctx, &evidence, &r))
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let truncated = contexts.iter().any(|c| c.pool.len() < k);
    Ok(summarize(k, per_query, truncated))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCurve {
    pub points: BTreeMap<usize, f64>,
    /// Budgets larger than some pool; those points use the whole pool.
    pub truncated: Vec<usize>,
}

pub fn k_curve(contexts: &[QueryContext], backend: &dyn GeneratorBackend, ks: &[usize], seed: u64) -> Result<KCurve> {
    if ks.is_empty() {
        return Err(arg_err("k-curve needs at least one budget"));
    }
    let mut points = BTreeMap::new();
    let mut truncated = Vec::new();
    for &k in ks {
        let r = evaluate_em(contexts, backend, k, seed)?;
        if r.truncated {
            truncated.push(k);
        }
        points.insert(k, r.em);
    }
    Ok(KCurve { points, truncated })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    TopK,
    TrainedSelector,
    RandomSubset,
}

impl SelectionMethod {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::TopK => "top_k",
            SelectionMethod::TrainedSelector => "trained_selector",
            SelectionMethod::RandomSubset => "random_subset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Counts over uniform bins partitioning [0, 1]; the last bin is closed.
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean_abs_dev: f64,
    /// Fraction of values in [0.25, 0.75].
    pub mid_mass: f64,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize, target: f64) -> Self {
        let mut counts = vec![0; bins.max(1)];
        for &v in values {
            let b = ((v * bins as f64).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        let n = values.len();
        let nf = n.max(1) as f64;
        Histogram {
            counts,
            n,
            mean_abs_dev: values.iter().map(|v| (v - target).abs()).sum::<f64>() / nf,
            mid_mass: values.iter().filter(|v| (0.25..=0.75).contains(*v)).count() as f64 / nf,
        }
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let b = self.counts.len();
        (0..=b).map(|i| i as f64 / b as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difficulty {
    pub method: SelectionMethod,
    pub phats: Vec<(String, f64)>,
    pub histogram: Histogram,
}

pub struct DifficultySettings {
    pub k_select: usize,
    pub k_rollouts: usize,
    pub delta: f64,
    pub bins: usize,
    pub target: f64,
    pub seed: u64,
}

/// Empirical solvability of one evidence set per query, chosen by `method`.
pub fn difficulty_distribution(
    contexts: &[QueryContext],
    method: SelectionMethod,
    selector: Option<&PolicyParams>,
    backend: &dyn GeneratorBackend,
    s: &DifficultySettings,
) -> Result<Difficulty> {
    if method == SelectionMethod::TrainedSelector && selector.is_none() {
        return Err(arg_err("trained-selector difficulty needs selector parameters"));
    }
    let phats = contexts
        .par_iter()
        .map(|ctx| {
            let mut rng = stream(s.seed, &[&ctx.query.id, "difficulty", method.name()]);
            let n = ctx.pool.len();
            let k = s.k_select.min(n);
            let evidence = match method {
                SelectionMethod::TopK => EvidenceSet::top_k(k, n),
                SelectionMethod::TrainedSelector => {
                    EvidenceSet::new(sample_subset(selector.unwrap(), &ctx.features, k, &mut rng)?, n)?
                }
                SelectionMethod::RandomSubset => EvidenceSet::new(sample(&mut rng, n, k).into_vec(), n)?,
            };
            let est = estimate_solvability(ctx, &evidence, backend, s.k_rollouts, s.delta, &mut rng)?;
            Ok((ctx.query.id.clone(), est.p_hat))
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = phats.iter().map(|(_, p)| *p).collect();
    Ok(Difficulty {
        method,
        histogram: Histogram::from_values(&values, s.bins, s.target),
        phats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub k: usize,
    pub refill: bool,
    /// EM percentages.
    pub full: f64,
    pub remove_cited: f64,
    pub keep_only_cited: f64,
    pub delta_rm: f64,
}

/// Full, Remove-Cited and Keep-Only-Cited evaluations. The cited set always
/// comes from the Full generation; a generation citing nothing (or failing
/// the format check) scores the same in all three conditions.
pub fn counterfactual_analysis(
    contexts: &[QueryContext],
    backend: &dyn GeneratorBackend,
    k: usize,
    refill: bool,
    seed: u64,
) -> Result<Counterfactual> {
    if k == 0 {
        return Err(arg_err("counterfactual budget k must be at least 1"));
    }
    let rows = contexts
        .par_iter()
        .map(|ctx| {
            let n = ctx.pool.len();
            let full_ev = EvidenceSet::top_k(k, n);
            let full = single_rollout(backend, ctx, &full_ev, seed, "cf-full")?;
            let cited: Vec<usize> = full
                .generation
                .citations
                .iter()
                .filter_map(|&c| full_ev.positions.get(c.wrapping_sub(1)).copied())
                .collect();
            let f = full.reward.em;
            if !full.generation.well_formed || cited.is_empty() {
                return Ok((f, f, f));
            }
            let removed: Vec<usize> = if refill {
                (0..n).filter(|p| !cited.contains(p)).take(k).collect()
            } else {
                full_ev.positions.iter().copied().filter(|p| !cited.contains(p)).collect()
            };
            let mut kept = cited.clone();
            kept.sort_unstable();
            let rm = if removed.is_empty() {
                0
            } else {
                single_rollout(backend, ctx, &EvidenceSet::new(removed, n)?, seed, "cf-remove")?.reward.em
            };
            let ko = single_rollout(backend, ctx, &EvidenceSet::new(kept, n)?, seed, "cf-keep")?.reward.em;
            Ok((f, rm, ko))
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<(u8, u8, u8)>>>()?;
    let n = rows.len().max(1) as f64;
    let pct = |sel: fn(&(u8, u8, u8)) -> u8| 100.0 * rows.iter().map(|r| sel(r) as f64).sum::<f64>() / n;
    let full = pct(|r| r.0);
    let remove_cited = pct(|r| r.1);
    let keep_only_cited = pct(|r| r.2);
    Ok(Counterfactual {
        k,
        refill,
        full,
        remove_cited,
        keep_only_cited,
        delta_rm: full - remove_cited,
    })
}

fn answer_in(text: &str, answers: &[String]) -> bool {
    let padded = format!(" {} ", normalize_answer(text));
    answers.iter().any(|a| {
        let a = normalize_answer(a);
        !a.is_empty() && padded.contains(&format!(" {a} "))
    })
}

/// Fraction of queries whose top-K pool prefix holds all required golden
/// documents (labeled queries) or any gold answer string (otherwise).
pub fn recall_at_k(contexts: &[QueryContext], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if ks.contains(&0) {
        return Err(arg_err("recall cutoff K must be at least 1"));
    }
    let mut out = BTreeMap::new();
    for &k in ks {
        let hits = contexts
            .iter()
            .filter(|ctx| {
                let top = &ctx.docs[..k.min(ctx.docs.len())];
                let multi_hop = !ctx.query.required_golden_ids.is_empty()
                    && ctx.docs.iter().all(|d| d.label != DocLabel::Unknown);
                if multi_hop {
                    ctx.query
                        .required_golden_ids
                        .iter()
                        .all(|id| top.iter().any(|d| &d.id == id))
                } else {
                    top.iter().any(|d| answer_in(&d.full_text(), &ctx.query.gold_answers))
                }
            })
            .count();
        out.insert(k, hits as f64 / contexts.len().max(1) as f64);
    }
    Ok(out)
}
