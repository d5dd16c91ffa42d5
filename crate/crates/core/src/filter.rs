//! Training-time filtering of queries whose solvability under the current
//! selector is near-deterministic or barely varies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{EvidenceSet, GeneratorBackend, QueryContext};
use crate::error::{Error, Result};
use crate::policy::{sample_subset, PolicyParams};
use crate::reward::estimate_solvability;
use crate::rng::{children, stream};

/// Where the N evidence sets per query come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterEvidence {
    /// Samples from the current selector.
    #[default]
    Selector,
    /// The raw top-k pool prefix, repeated N times.
    TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub enabled: bool,
    pub n_selections: usize,
    pub k_rollouts: usize,
    pub delta: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub v_min: f64,
    pub evidence: FilterEvidence,
    pub refilter_each_iteration: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            enabled: true,
            n_selections: 8,
            k_rollouts: 10,
            delta: 0.5,
            m_min: 0.25,
            m_max: 0.85,
            v_min: 0.02,
            evidence: FilterEvidence::Selector,
            refilter_each_iteration: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterDecision {
    Keep,
    DropTrivial,
    DropUnanswerable,
    DropLowVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub query_id: String,
    pub per_selection_phat: Vec<f64>,
    pub mu_q: f64,
    pub var_q: f64,
    pub decision: FilterDecision,
}

impl FilterStats {
    /// Mean, population variance and decision for a list of p̂ values.
    pub fn from_phats(query_id: &str, phats: Vec<f64>, cfg: &FilterConfig) -> Self {
        let n = phats.len().max(1) as f64;
        let mu_q = phats.iter().sum::<f64>() / n;
        let var_q = phats.iter().map(|p| (p - mu_q).powi(2)).sum::<f64>() / n;
        let decision = if mu_q > cfg.m_max {
            FilterDecision::DropTrivial
        } else if mu_q < cfg.m_min {
            FilterDecision::DropUnanswerable
        } else if var_q <= cfg.v_min {
            FilterDecision::DropLowVariance
        } else {
            FilterDecision::Keep
        };
        FilterStats {
            query_id: query_id.to_owned(),
            per_selection_phat: phats,
            mu_q,
            var_q,
            decision,
        }
    }
}

pub fn filter_stats(
    ctx: &QueryContext,
    selector: &PolicyParams,
    k_select: usize,
    backend: &dyn GeneratorBackend,
    cfg: &FilterConfig,
    rng: &mut crate::rng::StreamRng,
) -> Result<FilterStats> {
    if cfg.n_selections == 0 {
        return Err(Error::Config("filtering.n_selections must be at least 1".into()));
    }
    let mut streams = children(rng, cfg.n_selections);
    let mut phats = Vec::with_capacity(cfg.n_selections);
    for r in streams.iter_mut() {
        let evidence = match cfg.evidence {
            FilterEvidence::Selector => {
                let k = k_select.min(ctx.pool.len());
                EvidenceSet::new(sample_subset(selector, &ctx.features, k, r)?, ctx.pool.len())?
            }
            FilterEvidence::TopK => EvidenceSet::top_k(k_select, ctx.pool.len()),
        };
        let est = estimate_solvability(ctx, &evidence, backend, cfg.k_rollouts, cfg.delta, r)?;
        phats.push(est.p_hat);
    }
    Ok(FilterStats::from_phats(&ctx.query.id, phats, cfg))
}

/// Filter statistics for every query and the indices of the kept ones.
/// Each query draws from its own stream keyed by `(seed, query id, label)`.
pub fn apply_filter(
    contexts: &[QueryContext],
    selector: &PolicyParams,
    k_select: usize,
    backend: &dyn GeneratorBackend,
    cfg: &FilterConfig,
    seed: u64,
    label: &str,
) -> Result<(Vec<usize>, Vec<FilterStats>)> {
    let stats: Vec<FilterStats> = contexts
        .par_iter()
        .map(|ctx| {
            let mut rng = stream(seed, &[&ctx.query.id, "filter", label]);
            filter_stats(ctx, selector, k_select, backend, cfg, &mut rng)
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let kept = stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.decision == FilterDecision::Keep)
        .map(|(i, _)| i)
        .collect();
    Ok((kept, stats))
}
