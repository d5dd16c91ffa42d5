use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{build_report, EvalReport};
use crate::backend::{collect_rollouts, Decoding, EvidenceSet, GeneratorBackend, QueryContext, SimulatedGenerator};
use crate::config::TrainConfig;
use crate::error::{arg_err, Error, Result};
use crate::filter::{apply_filter, FilterStats};
use crate::grammar::{parse_selection, render_selection};
use crate::grpo::{grpo_step_with_lr, GroupBatch, GroupSample};
use crate::policy::{logprob_subset, sample_subset, PolicyParams};
use crate::reward::{
    selector_reward, GeneratorRewardBreakdown, SelectorRewardBreakdown, SolvabilityEstimate,
};
use crate::rng::{children, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Selector,
    Generator,
}

impl Stage {
    fn tag(self) -> &'static str {
        match self {
            Stage::Selector => "selector",
            Stage::Generator => "generator",
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub epoch: usize,
    pub group_id: String,
    pub step: usize,
    pub mu: f64,
    pub sigma: f64,
    pub mean_reward: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub version: u64,
}

/// One line of the reward log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardRecord {
    Selector {
        iteration: usize,
        query_id: String,
        sample: usize,
        indices: Vec<usize>,
        p_hat: f64,
        z: Vec<u8>,
        breakdown: SelectorRewardBreakdown,
    },
    Generator {
        iteration: usize,
        query_id: String,
        sample: usize,
        raw: String,
        n_docs: usize,
        gold_answers: Vec<String>,
        breakdown: GeneratorRewardBreakdown,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub updates: Vec<UpdateRecord>,
    pub rewards: Vec<RewardRecord>,
    pub skipped: Vec<SkipRecord>,
}

impl EpochLog {
    pub fn mean_rewards(&self) -> Vec<f64> {
        self.updates.iter().map(|u| u.mean_reward).collect()
    }
}

/// Position of an epoch within the whole run, for streams and the lr schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochIndex {
    pub iteration: usize,
    pub first_step: usize,
    pub total_steps: usize,
}

impl EpochIndex {
    pub fn single(iteration: usize, n_queries: usize) -> Self {
        EpochIndex {
            iteration,
            first_step: 0,
            total_steps: n_queries,
        }
    }
}

struct GroupOutcome {
    batch: GroupBatch,
    samples: Vec<GroupSample>,
    rewards: Vec<RewardRecord>,
}

fn selector_group(
    ctx: &QueryContext,
    theta: &PolicyParams,
    theta_ref: &PolicyParams,
    backend: &dyn GeneratorBackend,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<GroupOutcome> {
    let p = &cfg.pipeline;
    let k = p.k_select.min(ctx.pool.len());
    let mut rng = stream(p.seed, &[&ctx.query.id, Stage::Selector.tag(), &iteration.to_string()]);
    let streams = children(&mut rng, p.m);
    let scores = ctx.pool.scores();
    let range = (
        scores.iter().copied().fold(f64::INFINITY, f64::min),
        scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let per_sample: Vec<Result<(Vec<usize>, SolvabilityEstimate, SelectorRewardBreakdown, f64, f64)>> = streams
        .into_par_iter()
        .map(|mut r| {
            let indices = sample_subset(theta, &ctx.features, k, &mut r)?;
            let one_based: Vec<usize> = indices.iter().map(|i| i + 1).collect();
            let selection = parse_selection(&render_selection(&one_based), ctx.pool.len());
            let evidence = EvidenceSet::from_selection(&selection);
            let rollouts = collect_rollouts(backend, ctx, &evidence, p.k, &mut r)?;
            let est = SolvabilityEstimate::from_rollouts(&rollouts, cfg.selector_reward.delta);
            let selected: Vec<f64> = evidence.positions.iter().map(|&i| scores[i]).collect();
            let breakdown = selector_reward(&selection, est.p_hat, &selected, range, &cfg.selector_reward)?;
            let lp_old = logprob_subset(theta, &ctx.features, &indices)?;
            let lp_ref = logprob_subset(theta_ref, &ctx.features, &indices)?;
            Ok((indices, est, breakdown, lp_old, lp_ref))
        })
        .collect();
    let mut rewards = Vec::with_capacity(p.m);
    let (mut totals, mut lp_old, mut lp_ref, mut samples) = (vec![], vec![], vec![], vec![]);
    for (sample, item) in per_sample.into_iter().enumerate() {
        let (indices, est, breakdown, lo, lr) = item?;
        totals.push(breakdown.total);
        lp_old.push(lo);
        lp_ref.push(lr);
        rewards.push(RewardRecord::Selector {
            iteration,
            query_id: ctx.query.id.clone(),
            sample,
            indices: indices.iter().map(|i| i + 1).collect(),
            p_hat: est.p_hat,
            z: est.z,
            breakdown,
        });
        samples.push(GroupSample {
            features: ctx.features.clone(),
            indices,
        });
    }
    let batch = GroupBatch::new(totals, lp_old, lp_ref, cfg.grpo.norm_epsilon)?;
    Ok(GroupOutcome {
        batch,
        samples,
        rewards,
    })
}

fn generator_group(
    ctx: &QueryContext,
    selector: &PolicyParams,
    current: &SimulatedGenerator,
    phi_ref: &PolicyParams,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<GroupOutcome> {
    let p = &cfg.pipeline;
    let mut rng = stream(p.seed, &[&ctx.query.id, Stage::Generator.tag(), &iteration.to_string()]);
    let k = p.k_select.min(ctx.pool.len());
    let evidence = EvidenceSet::new(sample_subset(selector, &ctx.features, k, &mut rng)?, ctx.pool.len())?;
    let rollouts = collect_rollouts(current, ctx, &evidence, p.k, &mut rng)?;
    let feats = current.tempered_features(ctx, &evidence);
    let mut rewards = Vec::with_capacity(rollouts.len());
    let (mut totals, mut lp_old, mut lp_ref, mut samples) = (vec![], vec![], vec![], vec![]);
    for (sample, r) in rollouts.into_iter().enumerate() {
        let grounding: Vec<usize> = r
            .grounded_positions
            .as_ref()
            .ok_or_else(|| Error::Unsupported("rollout carries no grounding".into()))?
            .iter()
            .map(|g| g - 1)
            .collect();
        totals.push(r.reward.total);
        lp_old.push(r.logprob.ok_or_else(|| Error::Unsupported("rollout carries no log-probability".into()))?);
        lp_ref.push(logprob_subset(phi_ref, &feats, &grounding)?);
        rewards.push(RewardRecord::Generator {
            iteration,
            query_id: ctx.query.id.clone(),
            sample,
            raw: r.generation.raw.clone(),
            n_docs: evidence.len(),
            gold_answers: ctx.query.gold_answers.clone(),
            breakdown: r.reward,
        });
        samples.push(GroupSample {
            features: feats.clone(),
            indices: grounding,
        });
    }
    let batch = GroupBatch::new(totals, lp_old, lp_ref, cfg.grpo.norm_epsilon)?;
    Ok(GroupOutcome {
        batch,
        samples,
        rewards,
    })
}

fn apply_update(
    params: &PolicyParams,
    outcome: GroupOutcome,
    cfg: &TrainConfig,
    stage: Stage,
    idx: EpochIndex,
    step: usize,
    group_id: &str,
    log: &mut EpochLog,
) -> Result<PolicyParams> {
    let lr = cfg.grpo.lr_at(idx.first_step + step, idx.total_steps);
    let (next, stats) = grpo_step_with_lr(params, &outcome.batch, &outcome.samples, &cfg.grpo, lr)?;
    log.updates.push(UpdateRecord {
        stage,
        iteration: idx.iteration,
        epoch: 1,
        group_id: group_id.to_owned(),
        step: idx.first_step + step,
        mu: outcome.batch.mean,
        sigma: outcome.batch.std,
        mean_reward: outcome.batch.mean,
        kl: stats.kl,
        grad_norm: stats.grad_norm,
        lr,
        version: next.version,
    });
    log.rewards.extend(outcome.rewards);
    Ok(next)
}

fn skip(log: &mut EpochLog, stage: Stage, iteration: usize, query_id: &str, e: Error) -> Result<()> {
    if matches!(e, Error::Training(_)) {
        return Err(e);
    }
    tracing::warn!(stage = stage.tag(), query = query_id, error = %e, "skipping query");
    log.skipped.push(SkipRecord {
        stage,
        iteration,
        query_id: query_id.to_owned(),
        error: e.to_string(),
    });
    Ok(())
}

/// One pass of selector training over `queries` with the generator frozen.
pub fn train_selector_epoch(
    queries: &[&QueryContext],
    selector: &PolicyParams,
    backend: &dyn GeneratorBackend,
    cfg: &TrainConfig,
    idx: EpochIndex,
) -> Result<(PolicyParams, EpochLog)> {
    let theta_ref = selector.clone();
    let mut theta = selector.clone();
    let mut log = EpochLog::default();
    for (step, ctx) in queries.iter().enumerate() {
        let outcome = match selector_group(ctx, &theta, &theta_ref, backend, cfg, idx.iteration) {
            Ok(o) => o,
            Err(e) => {
                skip(&mut log, Stage::Selector, idx.iteration, &ctx.query.id, e)?;
                continue;
            }
        };
        theta = apply_update(&theta, outcome, cfg, Stage::Selector, idx, step, &ctx.query.id, &mut log)?;
    }
    Ok((theta, log))
}

/// One pass of generator training with the selector frozen. Needs a
/// trainable (simulated) generator and at least two rollouts per group.
pub fn train_generator_epoch(
    queries: &[&QueryContext],
    selector: &PolicyParams,
    generator: &dyn GeneratorBackend,
    cfg: &TrainConfig,
    idx: EpochIndex,
) -> Result<(PolicyParams, EpochLog)> {
    let sim = match generator.as_simulator() {
        Some(s) if generator.capabilities().trainable => s,
        _ => return Err(Error::Unsupported("generator backend is not trainable".into())),
    };
    if cfg.pipeline.k < 2 {
        return Err(arg_err(format!(
            "generator groups need at least 2 rollouts, got k={}",
            cfg.pipeline.k
        )));
    }
    let phi_ref = sim.params.clone();
    let mut current = sim.clone().with_decoding(Decoding::Sample);
    let mut log = EpochLog::default();
    for (step, ctx) in queries.iter().enumerate() {
        let outcome = match generator_group(ctx, selector, &current, &phi_ref, cfg, idx.iteration) {
            Ok(o) => o,
            Err(e) => {
                skip(&mut log, Stage::Generator, idx.iteration, &ctx.query.id, e)?;
                continue;
            }
        };
        let next = apply_update(&current.params, outcome, cfg, Stage::Generator, idx, step, &ctx.query.id, &mut log)?;
        current.params = next;
    }
    Ok((current.params, log))
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationOutput {
    pub iteration: usize,
    pub selector: PolicyParams,
    pub generator: PolicyParams,
    pub report: EvalReport,
    pub selector_log: EpochLog,
    pub generator_log: EpochLog,
    /// Present when filtering is re-run at the start of this iteration.
    pub filter_stats: Option<Vec<FilterStats>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub baseline: EvalReport,
    pub filter_stats: Vec<FilterStats>,
    pub kept: Vec<String>,
    pub iterations: Vec<IterationOutput>,
}

fn simulator(cfg: &TrainConfig, params: PolicyParams) -> SimulatedGenerator {
    SimulatedGenerator::new(params, cfg.pipeline.n_ground, cfg.generator_reward.clone())
        .with_temperature(cfg.pipeline.gen_temperature)
}

fn filtered<'a>(
    train: &'a [QueryContext],
    selector: &PolicyParams,
    generator: &SimulatedGenerator,
    cfg: &TrainConfig,
    label: &str,
) -> Result<(Vec<&'a QueryContext>, Vec<FilterStats>)> {
    if !cfg.filtering.enabled {
        return Ok((train.iter().collect(), Vec::new()));
    }
    let (kept, stats) = apply_filter(
        train,
        selector,
        cfg.pipeline.k_select,
        generator,
        &cfg.filtering,
        cfg.pipeline.seed,
        label,
    )?;
    Ok((kept.into_iter().map(|i| &train[i]).collect(), stats))
}

/// Filter once, then alternate a selector epoch and a generator epoch
/// `iterations` times. Each iteration ends with an evaluation of the current
/// generator on raw top-k evidence; `on_iteration` sees every iteration as it
/// completes.
pub fn run_iterative(
    train: &[QueryContext],
    eval: &[QueryContext],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationOutput) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let p = &cfg.pipeline;
    let mut selector = PolicyParams::new(p.selector_init.clone())?;
    let mut generator = PolicyParams::new(p.generator_init.clone())?;

    let baseline = build_report("baseline", eval, &simulator(cfg, generator.clone()), &selector, cfg)?;

    let (mut stage1_set, filter_stats) = filtered(train, &selector, &simulator(cfg, generator.clone()), cfg, "initial")?;
    let kept = stage1_set.iter().map(|c| c.query.id.clone()).collect();
    tracing::info!(kept = stage1_set.len(), total = train.len(), "filtered training queries");
    let all: Vec<&QueryContext> = train.iter().collect();

    let mut iterations = Vec::with_capacity(p.iterations);
    let (mut s1_step, mut s2_step) = (0usize, 0usize);
    for t in 1..=p.iterations {
        let mut refilter = None;
        if t > 1 && cfg.filtering.refilter_each_iteration {
            let (set, stats) = filtered(train, &selector, &simulator(cfg, generator.clone()), cfg, &format!("iter{t}"))?;
            stage1_set = set;
            refilter = Some(stats);
        }
        let frozen = simulator(cfg, generator.clone());
        let idx1 = EpochIndex {
            iteration: t,
            first_step: s1_step,
            total_steps: stage1_set.len() * p.iterations,
        };
        let (next_sel, selector_log) = train_selector_epoch(&stage1_set, &selector, &frozen, cfg, idx1)?;
        s1_step += stage1_set.len();
        selector = next_sel;

        let idx2 = EpochIndex {
            iteration: t,
            first_step: s2_step,
            total_steps: all.len() * p.iterations,
        };
        let (next_gen, generator_log) = train_generator_epoch(&all, &selector, &frozen, cfg, idx2)?;
        s2_step += all.len();
        generator = next_gen;

        let report = build_report(&format!("iter_{t}"), eval, &simulator(cfg, generator.clone()), &selector, cfg)?;
        tracing::info!(iteration = t, em = report.em, "iteration complete");
        let out = IterationOutput {
            iteration: t,
            selector: selector.clone(),
            generator: generator.clone(),
            report,
            selector_log,
            generator_log,
            filter_stats: refilter,
        };
        on_iteration(&out)?;
        iterations.push(out);
    }
    Ok(RunOutput {
        baseline,
        filter_stats,
        kept,
        iterations,
    })
}
