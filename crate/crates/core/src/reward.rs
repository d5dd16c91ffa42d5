//! Reward components for both training stages, the rollout-correctness
//! indicator, and the empirical solvability estimator.

use serde::{Deserialize, Serialize};

use crate::backend::{collect_rollouts, EvidenceSet, GeneratorBackend, QueryContext, Rollout};
use crate::error::{arg_err, Result};
use crate::grammar::{ParsedGeneration, ParsedSelection};
use crate::metrics::best_scores;
use crate::rng::StreamRng;

/// How the mean retrieval score of a selection is squashed into (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceRescale {
    /// logistic(mean / tau)
    #[default]
    Logistic,
    /// (mean − pool min) / (pool max − pool min), kept strictly inside (0, 1)
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorRewardConfig {
    /// Target correctness level.
    pub c: f64,
    /// Rollout-correctness threshold used while training the selector.
    pub delta: f64,
    pub lambda_bdy: f64,
    pub lambda_rel: f64,
    pub tau: f64,
    pub alpha: f64,
    pub k_star: usize,
    pub p_max: f64,
    pub rescale: RelevanceRescale,
}

impl Default for SelectorRewardConfig {
    fn default() -> Self {
        Self {
            c: 0.5,
            delta: 0.8,
            lambda_bdy: 1.0,
            lambda_rel: 0.2,
            tau: 10.0,
            alpha: 0.5,
            k_star: 5,
            p_max: 1.0,
            rescale: RelevanceRescale::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorRewardConfig {
    pub lambda_acc: f64,
    pub lambda_cite: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub n_star: usize,
}

impl Default for GeneratorRewardConfig {
    fn default() -> Self {
        Self {
            lambda_acc: 0.8,
            lambda_cite: 0.2,
            beta1: 0.7,
            beta2: 0.3,
            n_star: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorRewardBreakdown {
    pub r_bdy: f64,
    pub r_rel: f64,
    pub r_fmt: u8,
    pub p_cnt: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRewardBreakdown {
    pub r_fmt: u8,
    pub f1: f64,
    pub em: u8,
    pub r_acc: f64,
    pub n_cite: usize,
    pub r_cite: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvabilityEstimate {
    pub p_hat: f64,
    pub k_rollouts: usize,
    pub z: Vec<u8>,
}

impl SolvabilityEstimate {
    pub fn from_z(z: Vec<u8>) -> Self {
        let k = z.len();
        let hits: usize = z.iter().map(|&v| v as usize).sum();
        let p_hat = if k == 0 { 0.0 } else { hits as f64 / k as f64 };
        SolvabilityEstimate {
            p_hat,
            k_rollouts: k,
            z,
        }
    }

    pub fn from_rollouts(rollouts: &[Rollout], delta: f64) -> Self {
        Self::from_z(rollouts.iter().map(|r| rollout_correct(r.reward.total, delta)).collect())
    }
}

/// Triangular reward peaking at `p_hat = c`, zero at both endpoints.
pub fn boundary_reward(p_hat: f64, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(arg_err(format!("target correctness c={c} must lie in (0, 1)")));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(arg_err(format!("p_hat={p_hat} must lie in [0, 1]")));
    }
    Ok((p_hat / c).min((1.0 - p_hat) / (1.0 - c)))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// logistic(mean(scores) / tau).
pub fn relevance_reward(scores: &[f64], tau: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(arg_err("relevance reward needs at least one score"));
    }
    if !(tau > 0.0) {
        return Err(arg_err(format!("relevance temperature tau={tau} must be positive")));
    }
    Ok(logistic(mean(scores) / tau))
}

/// Min-max rescaling of the mean score against the pool's score range.
pub fn relevance_reward_minmax(scores: &[f64], pool_min: f64, pool_max: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(arg_err("relevance reward needs at least one score"));
    }
    const EPS: f64 = 1e-6;
    let m = mean(scores).clamp(pool_min, pool_max);
    Ok((m - pool_min + EPS) / (pool_max - pool_min + 2.0 * EPS))
}

pub fn count_penalty(size: usize, k_star: usize, alpha: f64, p_max: f64) -> f64 {
    (alpha * size.abs_diff(k_star) as f64).min(p_max)
}

/// Gated selector reward. `scores` are the retrieval scores of the selected
/// documents; `pool_range` is only consulted by the min-max rescaling.
pub fn selector_reward(
    selection: &ParsedSelection,
    p_hat: f64,
    scores: &[f64],
    pool_range: (f64, f64),
    cfg: &SelectorRewardConfig,
) -> Result<SelectorRewardBreakdown> {
    let r_bdy = boundary_reward(p_hat, cfg.c)?;
    let r_rel = if scores.is_empty() {
        0.0
    } else {
        match cfg.rescale {
            RelevanceRescale::Logistic => relevance_reward(scores, cfg.tau)?,
            RelevanceRescale::MinMax => relevance_reward_minmax(scores, pool_range.0, pool_range.1)?,
        }
    };
    let r_fmt = u8::from(selection.well_formed);
    let p_cnt = count_penalty(selection.indices.len(), cfg.k_star, cfg.alpha, cfg.p_max);
    let total = if r_fmt == 1 {
        cfg.lambda_bdy * r_bdy + cfg.lambda_rel * r_rel - p_cnt
    } else {
        0.0
    };
    Ok(SelectorRewardBreakdown {
        r_bdy,
        r_rel,
        r_fmt,
        p_cnt,
        total,
    })
}

/// 1.0 at the target count, 0.5 one away, 0 otherwise.
pub fn citation_reward(n_cite: usize, n_star: usize) -> f64 {
    match n_cite.abs_diff(n_star) {
        0 => 1.0,
        1 => 0.5,
        _ => 0.0,
    }
}

pub fn generator_reward(gen: &ParsedGeneration, gold_answers: &[String], cfg: &GeneratorRewardConfig) -> GeneratorRewardBreakdown {
    let (f1, em) = match &gen.answer {
        Some(a) => best_scores(a, gold_answers),
        None => (0.0, 0),
    };
    let r_acc = cfg.beta1 * f1 + cfg.beta2 * em as f64;
    let n_cite = gen.n_cite();
    let r_cite = citation_reward(n_cite, cfg.n_star);
    let r_fmt = u8::from(gen.well_formed);
    let total = if r_fmt == 1 {
        cfg.lambda_acc * r_acc + cfg.lambda_cite * r_cite
    } else {
        0.0
    };
    GeneratorRewardBreakdown {
        r_fmt,
        f1,
        em,
        r_acc,
        n_cite,
        r_cite,
        total,
    }
}

/// Inclusive threshold: a rollout counts as correct when its reward is at least `delta`.
pub fn rollout_correct(reward_total: f64, delta: f64) -> u8 {
    u8::from(reward_total >= delta)
}

/// Run `k` rollouts and average their correctness indicators.
pub fn estimate_solvability(
    ctx: &QueryContext,
    evidence: &EvidenceSet,
    backend: &dyn GeneratorBackend,
    k: usize,
    delta: f64,
    rng: &mut StreamRng,
) -> Result<SolvabilityEstimate> {
    let rollouts = collect_rollouts(backend, ctx, evidence, k, rng)?;
    Ok(SolvabilityEstimate::from_rollouts(&rollouts, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_generation, parse_selection, render_generation, render_selection};

    #[test]
    fn boundary_examples() {
        assert_eq!(boundary_reward(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(boundary_reward(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(boundary_reward(1.0, 0.5).unwrap(), 0.0);
        assert_eq!(boundary_reward(0.75, 0.5).unwrap(), 0.5);
        assert!(boundary_reward(0.5, 0.0).is_err());
        assert!(boundary_reward(0.5, 1.0).is_err());
        assert!(boundary_reward(1.5, 0.5).is_err());
    }

    #[test]
    fn boundary_reflection_and_shape() {
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            for c in [0.1, 0.3, 0.5, 0.8] {
                let a = boundary_reward(p, c).unwrap();
                let b = boundary_reward(1.0 - p, 1.0 - c).unwrap();
                assert!((a - b).abs() < 1e-12);
                if p < c {
                    assert!(boundary_reward(p + 1e-3, c).unwrap() > a);
                } else if p > c && p < 1.0 {
                    assert!(boundary_reward(p + 1e-3, c).unwrap() < a);
                }
            }
        }
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(relevance_reward(&[-3.0, 3.0], 7.0).unwrap(), 0.5);
        let r = relevance_reward(&[10.0, 10.0], 10.0).unwrap();
        assert!((r - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((r - 0.7311).abs() < 1e-4);
        assert!(relevance_reward(&[5.0, 6.0], 10.0).unwrap() > relevance_reward(&[5.0, 5.0], 10.0).unwrap());
        assert!(relevance_reward(&[], 10.0).is_err());
        let mm = relevance_reward_minmax(&[2.0], 0.0, 4.0).unwrap();
        assert!((mm - 0.5).abs() < 1e-9 && mm > 0.0 && mm < 1.0);
    }

    #[test]
    fn count_penalty_examples() {
        assert_eq!(count_penalty(5, 5, 0.5, 1.0), 0.0);
        assert_eq!(count_penalty(4, 5, 0.5, 1.0), 0.5);
        assert_eq!(count_penalty(1, 5, 0.5, 1.0), 1.0);
        assert_eq!(count_penalty(7, 5, 0.5, 1.0), 1.0);
    }

    #[test]
    fn selector_reward_examples() {
        let cfg = SelectorRewardConfig::default();
        let sel = parse_selection(&render_selection(&[1, 2, 3, 4, 5]), 25);
        let b = selector_reward(&sel, 0.5, &[10.0; 5], (0.0, 20.0), &cfg).unwrap();
        let r_rel = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((b.total - (1.0 + 0.2 * r_rel)).abs() < 1e-12);
        assert!((b.total - 1.14622).abs() < 1e-4);

        let bad = parse_selection("[1], [1]", 25);
        let b = selector_reward(&bad, 0.5, &[10.0; 2], (0.0, 20.0), &cfg).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.r_fmt, 0);
        assert_eq!(b.r_bdy, 1.0);

        let b = selector_reward(&sel, 1.0, &[10.0; 5], (0.0, 20.0), &cfg).unwrap();
        assert!((b.total - (0.2 * b.r_rel - b.p_cnt)).abs() < 1e-12);
    }

    #[test]
    fn selector_reward_ignores_order() {
        let cfg = SelectorRewardConfig::default();
        let a = parse_selection(&render_selection(&[1, 2, 3]), 25);
        let b = parse_selection(&render_selection(&[3, 1, 2]), 25);
        let ra = selector_reward(&a, 0.3, &[1.0, 2.0, 3.0], (0.0, 5.0), &cfg).unwrap();
        let rb = selector_reward(&b, 0.3, &[3.0, 1.0, 2.0], (0.0, 5.0), &cfg).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn generator_reward_examples() {
        let cfg = GeneratorRewardConfig::default();
        let gold = vec!["Ted Mosby".to_string()];
        let g = parse_generation(&render_generation(&[1, 2], "Ted Mosby"), 5);
        assert!((generator_reward(&g, &gold, &cfg).total - 1.0).abs() < 1e-12);
        let g = parse_generation(&render_generation(&[1, 2, 3, 4], "Ted Mosby"), 5);
        let b = generator_reward(&g, &gold, &cfg);
        assert_eq!(b.r_cite, 0.0);
        assert!((b.total - 0.8).abs() < 1e-12);
        let g = parse_generation("Ted Mosby", 5);
        assert_eq!(generator_reward(&g, &gold, &cfg).total, 0.0);
    }

    #[test]
    fn citation_table() {
        assert_eq!(citation_reward(2, 2), 1.0);
        assert_eq!(citation_reward(1, 2), 0.5);
        assert_eq!(citation_reward(3, 2), 0.5);
        assert_eq!(citation_reward(0, 2), 0.0);
        assert_eq!(citation_reward(5, 2), 0.0);
    }

    #[test]
    fn rollout_correct_is_inclusive() {
        assert_eq!(rollout_correct(1.0, 0.8), 1);
        assert_eq!(rollout_correct(0.8, 0.8), 1);
        assert_eq!(rollout_correct(0.2, 0.8), 0);
    }

    #[test]
    fn p_hat_from_z() {
        let est = SolvabilityEstimate::from_z(vec![1, 1, 0, 1, 0, 1, 1, 0, 1, 1]);
        assert_eq!(est.p_hat, 0.7);
        assert_eq!(est.k_rollouts, 10);
    }
}
