//! The alternating two-stage training loop and the evaluation analyses.

mod eval;
mod report;
mod train;

use rayon::prelude::*;

pub use eval::{
    counterfactual_analysis, difficulty_distribution, evaluate_em, k_curve, recall_at_k, Counterfactual, Difficulty, DifficultySettings,
    EmResult, Histogram, KCurve, QueryEval, SelectionMethod,
};
pub use report::{build_report, EvalReport};
pub use train::{
    run_iterative, train_generator_epoch, train_selector_epoch, EpochIndex, EpochLog, IterationOutput, RewardRecord,
    RunOutput, SkipRecord, Stage, UpdateRecord,
};

use crate::backend::QueryContext;
use crate::bm25::Bm25Index;
use crate::config::RetrievalConfig;
use crate::corpus::{Corpus, DenseScores};
use crate::error::Result;
use crate::pool::{build_candidate_pool, pool_from_dense};

/// Candidate pools and features for every query in the corpus, in query order.
pub fn build_contexts(corpus: &Corpus, cfg: &RetrievalConfig, dense: Option<&DenseScores>) -> Result<Vec<QueryContext>> {
    let index = match dense {
        Some(_) => None,
        None => Some(Bm25Index::build(corpus, cfg.bm25())),
    };
    corpus
        .queries()
        .par_iter()
        .map(|q| {
            let pool = match (dense, &index) {
                (Some(d), _) => pool_from_dense(q, corpus, d, cfg.n_pool)?,
                (None, Some(ix)) => build_candidate_pool(q, corpus, ix, cfg.n_pool)?,
                (None, None) => unreachable!(),
            };
            QueryContext::new(q, pool, corpus)
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect()
}

/// Split off the trailing `fraction` of queries for evaluation. With a zero
/// fraction both halves are the full set.
pub fn split_heldout(contexts: Vec<QueryContext>, fraction: f64) -> (Vec<QueryContext>, Vec<QueryContext>) {
    let n = contexts.len();
    let n_eval = ((n as f64) * fraction).round() as usize;
    if n_eval == 0 || n_eval >= n {
        return (contexts.clone(), contexts);
    }
    let mut train = contexts;
    let eval = train.split_off(n - n_eval);
    (train, eval)
}

/// Run `f` on a worker pool of `threads` threads (0 = one per core).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| crate::error::Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}
