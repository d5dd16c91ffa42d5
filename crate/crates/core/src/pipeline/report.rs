use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{
    counterfactual_analysis, difficulty_distribution, evaluate_em, k_curve, recall_at_k, Counterfactual,
    DifficultySettings, Histogram, QueryEval, SelectionMethod,
};
use crate::backend::{Decoding, QueryContext, SimulatedGenerator};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub k: usize,
    pub em: f64,
    pub f1: f64,
    pub per_query: Vec<QueryEval>,
    pub k_curve: BTreeMap<usize, f64>,
    pub k_curve_truncated: Vec<usize>,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub phat_histogram: BTreeMap<String, Histogram>,
    pub counterfactual: Counterfactual,
}

/// Evaluate a simulated generator on raw top-k evidence. The selector is only
/// used for the trained-selector difficulty histogram.
pub fn build_report(
    label: &str,
    contexts: &[QueryContext],
    generator: &SimulatedGenerator,
    selector: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    let p = &cfg.pipeline;
    let eval_gen = generator.clone().with_decoding(p.eval_decoding);
    let sample_gen = generator.clone().with_decoding(Decoding::Sample);
    let em = evaluate_em(contexts, &eval_gen, p.eval_k, p.seed)?;
    let curve = k_curve(contexts, &eval_gen, &p.k_curve, p.seed)?;
    let recall = recall_at_k(contexts, &p.recall_ks)?;
    let settings = DifficultySettings {
        k_select: p.k_select,
        k_rollouts: p.k,
        delta: cfg.selector_reward.delta,
        bins: p.histogram_bins,
        target: cfg.selector_reward.c,
        seed: p.seed,
    };
    let mut phat_histogram = BTreeMap::new();
    for method in [
        SelectionMethod::TopK,
        SelectionMethod::TrainedSelector,
        SelectionMethod::RandomSubset,
    ] {
        let d = difficulty_distribution(contexts, method, Some(selector), &sample_gen, &settings)?;
        phat_histogram.insert(method.name().to_owned(), d.histogram);
    }
    let counterfactual = counterfactual_analysis(contexts, &eval_gen, p.eval_k, p.remove_cited_refill, p.seed)?;
    Ok(EvalReport {
        label: label.to_owned(),
        k: p.eval_k,
        em: em.em,
        f1: em.f1,
        per_query: em.per_query,
        k_curve: curve.points,
        k_curve_truncated: curve.truncated,
        recall_at_k: recall,
        phat_histogram,
        counterfactual,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `<stem>.json`, `<stem>_queries.csv` (one row per query) and
    /// `<stem>_curves.csv` (one row per series point) inside `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json() + "\n").map_err(|e| Error::io(&json, e))?;

        let path = dir.join(format!("{stem}_queries.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(["query_id", "em", "f1", "well_formed", "prediction", "cited_doc_ids"])
            .map_err(|e| csv_err(&path, e))?;
        for q in &self.per_query {
            w.write_record([
                q.query_id.clone(),
                q.em.to_string(),
                q.f1.to_string(),
                q.well_formed.to_string(),
                q.prediction.clone().unwrap_or_default(),
                q.cited_doc_ids.join(";"),
            ])
            .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(format!("{stem}_curves.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(["series", "method", "x", "value"]).map_err(|e| csv_err(&path, e))?;
        let mut rows: Vec<[String; 4]> = Vec::new();
        for (k, em) in &self.k_curve {
            rows.push(["em_at_k".into(), "top_k".into(), k.to_string(), em.to_string()]);
        }
        for (k, r) in &self.recall_at_k {
            rows.push(["recall_at_k".into(), "top_k".into(), k.to_string(), r.to_string()]);
        }
        for (method, h) in &self.phat_histogram {
            for (edge, c) in h.bin_edges().iter().zip(&h.counts) {
                rows.push(["phat_histogram".into(), method.clone(), edge.to_string(), c.to_string()]);
            }
        }
        let cf = &self.counterfactual;
        for (name, v) in [
            ("full", cf.full),
            ("remove_cited", cf.remove_cited),
            ("keep_only_cited", cf.keep_only_cited),
        ] {
            rows.push(["counterfactual".into(), name.into(), cf.k.to_string(), v.to_string()]);
        }
        for r in rows {
            w.write_record(&r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}
