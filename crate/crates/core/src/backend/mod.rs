//! Generator backends: the trainable simulator and a remote chat-completion client.

mod prompt;
mod remote;
mod simulator;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use prompt::{render_documents, render_user_message, GENERATOR_PROMPT, SELECTOR_PROMPT};
pub use remote::{EndpointConfig, RemoteGenerator};
pub use simulator::{Decoding, SimulatedGenerator};

use crate::corpus::{Corpus, DocLabel, Document, Query};
use crate::error::{arg_err, Error, Result};
use crate::grammar::{ParsedGeneration, ParsedSelection};
use crate::policy::{featurize, DocFeatures};
use crate::pool::CandidatePool;
use crate::reward::GeneratorRewardBreakdown;
use crate::rng::{children, StreamRng};

/// Everything a backend or policy needs about one query: the pool, its
/// features, and the pooled documents in pool order.
#[derive(Debug, Clone)]
pub struct QueryContext {
    pub query: Query,
    pub pool: CandidatePool,
    pub features: Vec<DocFeatures>,
    pub docs: Vec<Document>,
}

impl QueryContext {
    pub fn new(query: &Query, pool: CandidatePool, corpus: &Corpus) -> Result<Self> {
        let features = featurize(query, &pool, corpus)?;
        let docs = pool
            .entries
            .iter()
            .map(|e| corpus.document(&e.doc_id).cloned().ok_or_else(|| Error::Integrity(vec![e.doc_id.clone()])))
            .collect::<Result<Vec<_>>>()?;
        Ok(QueryContext {
            query: query.clone(),
            pool,
            features,
            docs,
        })
    }

    pub fn is_labeled(&self) -> bool {
        self.docs.iter().all(|d| d.label != DocLabel::Unknown)
    }

    pub fn evidence_features(&self, evidence: &EvidenceSet) -> Vec<DocFeatures> {
        evidence.positions.iter().map(|&p| self.features[p].clone()).collect()
    }

    pub fn evidence_docs<'a>(&'a self, evidence: &'a EvidenceSet) -> impl Iterator<Item = &'a Document> + 'a {
        evidence.positions.iter().map(move |&p| &self.docs[p])
    }

    /// Simulator answer rule: every required golden document must be present
    /// in the evidence and among the grounded documents (`grounding` indexes
    /// into the evidence set).
    pub fn grounding_correct(&self, evidence: &EvidenceSet, grounding: &[usize]) -> bool {
        self.query.required_golden_ids.iter().all(|id| {
            grounding
                .iter()
                .any(|&g| evidence.positions.get(g).is_some_and(|&p| self.docs[p].id == *id))
        })
    }
}

/// An ordered subset of pool positions (0-based) handed to the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub positions: Vec<usize>,
    pub well_formed: bool,
}

impl EvidenceSet {
    pub fn new(positions: Vec<usize>, pool_len: usize) -> Result<Self> {
        let mut seen = vec![false; pool_len];
        for &p in &positions {
            if p >= pool_len || std::mem::replace(&mut seen[p], true) {
                return Err(arg_err(format!("invalid evidence position {p} for pool of {pool_len}")));
            }
        }
        Ok(EvidenceSet {
            positions,
            well_formed: true,
        })
    }

    /// The first `k` pool positions, truncated to the pool size.
    pub fn top_k(k: usize, pool_len: usize) -> Self {
        EvidenceSet {
            positions: (0..k.min(pool_len)).collect(),
            well_formed: true,
        }
    }

    /// From a parsed selector output; malformed selections carry no documents.
    pub fn from_selection(sel: &ParsedSelection) -> Self {
        if sel.well_formed {
            EvidenceSet {
                positions: sel.indices.iter().map(|i| i - 1).collect(),
                well_formed: true,
            }
        } else {
            EvidenceSet {
                positions: Vec::new(),
                well_formed: false,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub generation: ParsedGeneration,
    /// 1-based positions within the evidence set (simulator only).
    pub grounded_positions: Option<Vec<usize>>,
    pub reward: GeneratorRewardBreakdown,
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub trainable: bool,
    pub deterministic_mode: bool,
}

pub trait GeneratorBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn rollout(&self, ctx: &QueryContext, evidence: &EvidenceSet, rng: &mut StreamRng) -> Result<Rollout>;

    /// Downcast hook for training paths that need the simulator's parameters.
    fn as_simulator(&self) -> Option<&SimulatedGenerator> {
        None
    }
}

/// `k` rollouts in index order. Each rollout gets its own child stream, so the
/// result does not depend on how the work is scheduled.
pub fn collect_rollouts(
    backend: &dyn GeneratorBackend,
    ctx: &QueryContext,
    evidence: &EvidenceSet,
    k: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Rollout>> {
    if k == 0 {
        return Err(arg_err("need at least one rollout"));
    }
    let streams = children(rng, k);
    let results: Vec<Result<Rollout>> = streams
        .into_par_iter()
        .map(|mut r| backend.rollout(ctx, evidence, &mut r))
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Rollout {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
