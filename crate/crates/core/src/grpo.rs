//! Group-relative policy optimization for the sequential-softmax policies.
//!
//! J(w) = mean_i min(r_i A_i, clip(r_i, 1−ε, 1+ε) A_i) − β · mean_i KL_i(w)
//! with r_i = exp(lp_i(w) − lp_old_i).

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::policy::{grad_logprob_subset, logprob_subset, DocFeatures, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup, then cosine decay to zero.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// lp_new − lp_ref
    #[default]
    LogRatio,
    /// exp(lp_ref − lp_new) − (lp_ref − lp_new) − 1
    K3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub norm_epsilon: f64,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub warmup_fraction: f64,
    pub kl_estimator: KlEstimator,
    /// Gradient steps per sampled group; values above 1 reuse the batch and
    /// make the clip active.
    pub inner_steps: usize,
    pub ratio_cap: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            clip_epsilon: 0.2,
            kl_coeff: 0.001,
            norm_epsilon: 1e-8,
            learning_rate: 1.0,
            schedule: LrSchedule::Cosine,
            warmup_fraction: 0.02,
            kl_estimator: KlEstimator::LogRatio,
            inner_steps: 1,
            ratio_cap: 1e6,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0) {
            return Err(Error::Config(format!("grpo.clip_epsilon={} must be positive", self.clip_epsilon)));
        }
        for (name, v) in [
            ("kl_coeff", self.kl_coeff),
            ("norm_epsilon", self.norm_epsilon),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("grpo.{name}={v} must be finite and nonnegative")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("grpo.warmup_fraction must lie in [0, 1)".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("grpo.inner_steps must be at least 1".into()));
        }
        if !(self.ratio_cap > 1.0) {
            return Err(Error::Config("grpo.ratio_cap must exceed 1".into()));
        }
        Ok(())
    }

    /// Learning rate for update `step` (0-based) out of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let total = total.max(1) as f64;
                let warm = (self.warmup_fraction * total).ceil();
                let s = step as f64;
                if s < warm {
                    self.learning_rate * (s + 1.0) / warm
                } else {
                    let progress = ((s - warm) / (total - warm).max(1.0)).min(1.0);
                    self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}

/// (r − μ)/(σ + ε) with the population standard deviation.
pub fn normalize_advantages(rewards: &[f64], norm_epsilon: f64) -> Result<Vec<f64>> {
    let (mu, sigma) = mean_std(rewards)?;
    Ok(rewards.iter().map(|r| (r - mu) / (sigma + norm_epsilon)).collect())
}

fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(arg_err(format!("a group needs at least 2 members, got {}", xs.len())));
    }
    if xs.iter().all(|x| *x == xs[0]) {
        // the summed mean of a constant group can miss the constant by an ulp
        return Ok((xs[0], 0.0));
    }
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// Returns the surrogate value and whether the ratio hit `ratio_cap`.
pub fn clipped_surrogate_capped(
    logprob_new: f64,
    logprob_old: f64,
    advantage: f64,
    clip_epsilon: f64,
    ratio_cap: f64,
) -> (f64, bool) {
    let log_ratio = logprob_new - logprob_old;
    let capped = log_ratio > ratio_cap.ln();
    let r = if capped { ratio_cap } else { log_ratio.exp() };
    let clipped = r.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    ((r * advantage).min(clipped * advantage), capped)
}

pub fn clipped_surrogate(logprob_new: f64, logprob_old: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    clipped_surrogate_capped(logprob_new, logprob_old, advantage, clip_epsilon, f64::INFINITY).0
}

/// ∂ surrogate / ∂ logprob_new: r·A where the unclipped branch is active, else 0.
fn surrogate_slope(logprob_new: f64, logprob_old: f64, advantage: f64, clip_epsilon: f64, ratio_cap: f64) -> f64 {
    let log_ratio = logprob_new - logprob_old;
    if log_ratio > ratio_cap.ln() {
        return 0.0;
    }
    let r = log_ratio.exp();
    let active = if advantage >= 0.0 {
        r <= 1.0 + clip_epsilon
    } else {
        r >= 1.0 - clip_epsilon
    };
    if active {
        r * advantage
    } else {
        0.0
    }
}

fn kl_value(est: KlEstimator, lp_new: f64, lp_ref: f64) -> f64 {
    match est {
        KlEstimator::LogRatio => lp_new - lp_ref,
        KlEstimator::K3 => {
            let d = lp_ref - lp_new;
            d.exp() - d - 1.0
        }
    }
}

fn kl_slope(est: KlEstimator, lp_new: f64, lp_ref: f64) -> f64 {
    match est {
        KlEstimator::LogRatio => 1.0,
        KlEstimator::K3 => 1.0 - (lp_ref - lp_new).exp(),
    }
}

/// One sampled action: the feature rows it was drawn from and the ordered choice.
#[derive(Debug, Clone)]
pub struct GroupSample {
    pub features: Vec<DocFeatures>,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub rewards: Vec<f64>,
    pub logprob_new: Vec<f64>,
    pub logprob_old: Vec<f64>,
    pub logprob_ref: Vec<f64>,
    pub advantages: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl GroupBatch {
    /// On-policy batch: `logprob_new` starts equal to `logprob_old`.
    pub fn new(rewards: Vec<f64>, logprob_old: Vec<f64>, logprob_ref: Vec<f64>, norm_epsilon: f64) -> Result<Self> {
        let n = rewards.len();
        if logprob_old.len() != n || logprob_ref.len() != n {
            return Err(arg_err("group batch lists differ in length"));
        }
        let (mean, std) = mean_std(&rewards)?;
        let advantages = normalize_advantages(&rewards, norm_epsilon)?;
        Ok(GroupBatch {
            rewards,
            logprob_new: logprob_old.clone(),
            logprob_old,
            logprob_ref,
            advantages,
            mean,
            std,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub objective: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub ratio_capped: bool,
}

/// Objective value and gradient at `params`.
pub fn objective_and_grad(
    params: &PolicyParams,
    batch: &GroupBatch,
    samples: &[GroupSample],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>, f64, bool)> {
    if samples.len() != batch.len() {
        return Err(arg_err(format!("{} samples for a batch of {}", samples.len(), batch.len())));
    }
    let n = batch.len() as f64;
    let mut objective = 0.0;
    let mut kl = 0.0;
    let mut capped_any = false;
    let mut grad = vec![0.0; params.dim()];
    // fixed reduction order keeps results bit-identical across thread counts
    for (i, s) in samples.iter().enumerate() {
        let lp = logprob_subset(params, &s.features, &s.indices)?;
        let (surr, capped) = clipped_surrogate_capped(
            lp,
            batch.logprob_old[i],
            batch.advantages[i],
            cfg.clip_epsilon,
            cfg.ratio_cap,
        );
        capped_any |= capped;
        let k = kl_value(cfg.kl_estimator, lp, batch.logprob_ref[i]);
        objective += (surr - cfg.kl_coeff * k) / n;
        kl += k / n;
        let slope = surrogate_slope(lp, batch.logprob_old[i], batch.advantages[i], cfg.clip_epsilon, cfg.ratio_cap)
            - cfg.kl_coeff * kl_slope(cfg.kl_estimator, lp, batch.logprob_ref[i]);
        if slope != 0.0 {
            let g = grad_logprob_subset(params, &s.features, &s.indices)?;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += slope * gi / n;
            }
        }
    }
    Ok((objective, grad, kl, capped_any))
}

pub fn objective(params: &PolicyParams, batch: &GroupBatch, samples: &[GroupSample], cfg: &GrpoConfig) -> Result<f64> {
    objective_and_grad(params, batch, samples, cfg).map(|r| r.0)
}

/// Gradient ascent on the objective with learning rate `lr`, repeated
/// `cfg.inner_steps` times against the same batch. Returns `version + 1`.
pub fn grpo_step_with_lr(
    params: &PolicyParams,
    batch: &GroupBatch,
    samples: &[GroupSample],
    cfg: &GrpoConfig,
    lr: f64,
) -> Result<(PolicyParams, StepStats)> {
    let mut w = params.clone();
    if batch.advantages.iter().all(|a| *a == 0.0) {
        // a constant-reward group carries no learning signal
        w.version = params.version + 1;
        return Ok((
            w,
            StepStats {
                objective: 0.0,
                kl: 0.0,
                grad_norm: 0.0,
                lr,
                ratio_capped: false,
            },
        ));
    }
    let mut stats = StepStats {
        objective: 0.0,
        kl: 0.0,
        grad_norm: 0.0,
        lr,
        ratio_capped: false,
    };
    for step in 0..cfg.inner_steps {
        let (obj, grad, kl, capped) = objective_and_grad(&w, batch, samples, cfg)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() || !obj.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient at inner step {step}: weights={:?} grad={grad:?} objective={obj} \
                 rewards={:?} advantages={:?} logprob_old={:?}",
                w.weights, batch.rewards, batch.advantages, batch.logprob_old
            )));
        }
        if step == 0 {
            stats.objective = obj;
            stats.kl = kl;
            stats.grad_norm = norm;
        }
        stats.ratio_capped |= capped;
        for (wi, gi) in w.weights.iter_mut().zip(&grad) {
            *wi += lr * gi;
        }
    }
    if w.weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!("weights diverged: {:?}", w.weights)));
    }
    w.version = params.version + 1;
    Ok((w, stats))
}

pub fn grpo_step(
    params: &PolicyParams,
    batch: &GroupBatch,
    samples: &[GroupSample],
    cfg: &GrpoConfig,
) -> Result<(PolicyParams, StepStats)> {
    grpo_step_with_lr(params, batch, samples, cfg, cfg.learning_rate)
}
