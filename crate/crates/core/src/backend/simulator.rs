use serde::{Deserialize, Serialize};

use super::{Capabilities, EvidenceSet, GeneratorBackend, QueryContext, Rollout};
use crate::corpus::DocLabel;
use crate::error::{arg_err, Error, Result};
use crate::grammar::{parse_generation, render_generation};
use crate::policy::{exact_solvability, greedy_subset, logprob_subset, sample_subset, DocFeatures, PolicyParams};
use crate::reward::{generator_reward, GeneratorRewardConfig};
use crate::rng::StreamRng;

pub const UNKNOWN_ANSWER: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Sample,
    /// Ground on the top-scoring documents; no randomness.
    Greedy,
}

/// A generator whose answer is decided by which evidence documents it
/// grounds on. Grounding is a draw from a sequential-softmax policy over the
/// evidence features.
#[derive(Debug, Clone)]
pub struct SimulatedGenerator {
    pub params: PolicyParams,
    pub n_ground: usize,
    pub temperature: f64,
    pub decoding: Decoding,
    pub reward_cfg: GeneratorRewardConfig,
}

impl SimulatedGenerator {
    pub fn new(params: PolicyParams, n_ground: usize, reward_cfg: GeneratorRewardConfig) -> Self {
        SimulatedGenerator {
            params,
            n_ground,
            temperature: 1.0,
            decoding: Decoding::Sample,
            reward_cfg,
        }
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_params(&self, params: PolicyParams) -> Self {
        SimulatedGenerator { params, ..self.clone() }
    }

    /// Evidence features divided by the temperature, so that logits, sampling
    /// and gradients all see the same tempered distribution.
    pub fn tempered_features(&self, ctx: &QueryContext, evidence: &EvidenceSet) -> Vec<DocFeatures> {
        let inv = 1.0 / self.temperature;
        ctx.evidence_features(evidence)
            .into_iter()
            .map(|x| x.into_iter().map(|v| v * inv).collect())
            .collect()
    }

    fn check(&self, ctx: &QueryContext, evidence: &EvidenceSet) -> Result<()> {
        if !ctx.is_labeled() {
            return Err(Error::Unsupported(format!(
                "simulated generator needs labeled documents (query `{}`)",
                ctx.query.id
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(arg_err(format!("temperature {} must be positive", self.temperature)));
        }
        if evidence.is_empty() || self.n_ground == 0 {
            return Err(arg_err(format!(
                "cannot ground {} of {} documents",
                self.n_ground,
                evidence.len()
            )));
        }
        Ok(())
    }

    /// Documents grounded per rollout: `n_ground`, or all of a smaller set.
    pub fn grounding_size(&self, evidence: &EvidenceSet) -> usize {
        self.n_ground.min(evidence.len())
    }

    /// Probability of a correct rollout on this evidence under the current decoding.
    pub fn exact_solvability(&self, ctx: &QueryContext, evidence: &EvidenceSet) -> Result<f64> {
        self.check(ctx, evidence)?;
        match self.decoding {
            Decoding::Sample => {
                let tempered = PolicyParams {
                    weights: self.params.weights.iter().map(|w| w / self.temperature).collect(),
                    ..self.params.clone()
                };
                exact_solvability(ctx, evidence, &tempered, self.grounding_size(evidence))
            }
            Decoding::Greedy => {
                let feats = ctx.evidence_features(evidence);
                let g = greedy_subset(&self.params, &feats, self.grounding_size(evidence))?;
                Ok(if ctx.grounding_correct(evidence, &g) { 1.0 } else { 0.0 })
            }
        }
    }

    pub fn simulate_rollout(&self, ctx: &QueryContext, evidence: &EvidenceSet, rng: &mut StreamRng) -> Result<Rollout> {
        self.check(ctx, evidence)?;
        let feats = self.tempered_features(ctx, evidence);
        let n = self.grounding_size(evidence);
        let grounding = match self.decoding {
            Decoding::Sample => sample_subset(&self.params, &feats, n, rng)?,
            Decoding::Greedy => greedy_subset(&self.params, &feats, n)?,
        };
        let answer = if ctx.grounding_correct(evidence, &grounding) {
            ctx.query.gold_answers[0].clone()
        } else {
            grounding
                .iter()
                .map(|&g| &ctx.docs[evidence.positions[g]])
                .find(|d| d.label == DocLabel::Misleading && d.answer_span.is_some())
                .and_then(|d| d.answer_span.clone())
                .unwrap_or_else(|| UNKNOWN_ANSWER.to_owned())
        };
        let cited: Vec<usize> = grounding.iter().map(|g| g + 1).collect();
        let generation = parse_generation(&render_generation(&cited, &answer), evidence.len());
        let reward = generator_reward(&generation, &ctx.query.gold_answers, &self.reward_cfg);
        let logprob = logprob_subset(&self.params, &feats, &grounding)?;
        Ok(Rollout {
            generation,
            grounded_positions: Some(cited),
            reward,
            logprob: Some(logprob),
        })
    }
}

impl GeneratorBackend for SimulatedGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            trainable: true,
            deterministic_mode: true,
        }
    }

    fn rollout(&self, ctx: &QueryContext, evidence: &EvidenceSet, rng: &mut StreamRng) -> Result<Rollout> {
        self.simulate_rollout(ctx, evidence, rng)
    }

    fn as_simulator(&self) -> Option<&SimulatedGenerator> {
        Some(self)
    }
}
