//! Layered run configuration: built-in defaults, then a TOML file, then
//! `section.key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{Decoding, EndpointConfig};
use crate::bm25::Bm25Params;
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::grpo::GrpoConfig;
use crate::policy::FEATURE_NAMES;
use crate::reward::{GeneratorRewardConfig, SelectorRewardConfig};
use crate::synth::BenchmarkSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub n_pool: usize,
    pub k1: f64,
    pub b: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let p = Bm25Params::default();
        RetrievalConfig {
            n_pool: 25,
            k1: p.k1,
            b: p.b,
        }
    }
}

impl RetrievalConfig {
    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Evidence sets sampled per query in selector training.
    pub m: usize,
    /// Generator rollouts per evidence set.
    pub k: usize,
    /// Documents per selected evidence set.
    pub k_select: usize,
    /// Outer iterations of the two-stage loop.
    pub iterations: usize,
    /// Documents the simulated generator grounds on.
    pub n_ground: usize,
    pub gen_temperature: f64,
    pub selector_init: Vec<f64>,
    pub generator_init: Vec<f64>,
    pub eval_k: usize,
    pub k_curve: Vec<usize>,
    pub recall_ks: Vec<usize>,
    pub histogram_bins: usize,
    pub remove_cited_refill: bool,
    pub eval_decoding: Decoding,
    /// Trailing fraction of queries held out for evaluation.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            m: 8,
            k: 10,
            k_select: 5,
            iterations: 3,
            n_ground: 2,
            gen_temperature: 1.0,
            selector_init: vec![1.0, 6.0, 0.0, 0.0],
            generator_init: vec![1.0, 2.0, 0.0, 0.0],
            eval_k: 5,
            k_curve: vec![1, 3, 5, 10, 15, 30],
            recall_ks: vec![1, 3, 5, 10, 15, 25],
            histogram_bins: 10,
            remove_cited_refill: true,
            eval_decoding: Decoding::Greedy,
            heldout_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub retrieval: RetrievalConfig,
    pub selector_reward: SelectorRewardConfig,
    pub generator_reward: GeneratorRewardConfig,
    pub grpo: GrpoConfig,
    pub filtering: FilterConfig,
    pub pipeline: PipelineConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.selector_reward;
        if !(s.c > 0.0 && s.c < 1.0) {
            return bad(format!("selector_reward.c={} must lie in (0, 1)", s.c));
        }
        if !(s.tau > 0.0) {
            return bad(format!("selector_reward.tau={} must be positive", s.tau));
        }
        if s.alpha < 0.0 || s.p_max < 0.0 {
            return bad("selector_reward.alpha and p_max must be nonnegative".into());
        }
        let p = &self.pipeline;
        if p.m < 2 {
            return bad(format!("pipeline.m={} must be at least 2", p.m));
        }
        if p.k < 1 {
            return bad("pipeline.k must be at least 1".into());
        }
        if p.k_select < 1 || p.n_ground < 1 || p.iterations < 1 || p.eval_k < 1 {
            return bad("pipeline.k_select, n_ground, iterations and eval_k must be at least 1".into());
        }
        if !(p.gen_temperature > 0.0) {
            return bad("pipeline.gen_temperature must be positive".into());
        }
        for (name, w) in [("selector_init", &p.selector_init), ("generator_init", &p.generator_init)] {
            if w.len() != FEATURE_NAMES.len() || w.iter().any(|v| !v.is_finite()) {
                return bad(format!("pipeline.{name} needs {} finite weights", FEATURE_NAMES.len()));
            }
        }
        if p.k_curve.is_empty() || p.k_curve.contains(&0) || p.recall_ks.contains(&0) {
            return bad("pipeline.k_curve must be nonempty and K values positive".into());
        }
        if p.histogram_bins == 0 {
            return bad("pipeline.histogram_bins must be positive".into());
        }
        if !(0.0..1.0).contains(&p.heldout_fraction) {
            return bad("pipeline.heldout_fraction must lie in [0, 1)".into());
        }
        if self.retrieval.n_pool < 1 {
            return bad("retrieval.n_pool must be at least 1".into());
        }
        let f = &self.filtering;
        if f.n_selections < 1 || f.k_rollouts < 1 || f.m_min > f.m_max {
            return bad("filtering needs n_selections, k_rollouts ≥ 1 and m_min ≤ m_max".into());
        }
        self.grpo.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulator,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Optional separate file of query records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense_scores: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub mode: Mode,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
    pub log_level: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            corpus: None,
            queries: None,
            dense_scores: None,
            output_dir: PathBuf::from("runs/default"),
            mode: Mode::Simulator,
            threads: 1,
            log_level: "info".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub retrieval: RetrievalConfig,
    pub selector_reward: SelectorRewardConfig,
    pub generator_reward: GeneratorRewardConfig,
    pub grpo: GrpoConfig,
    pub filtering: FilterConfig,
    pub pipeline: PipelineConfig,
    pub benchmark: BenchmarkSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
}

const SECTIONS: [&str; 9] = [
    "run",
    "retrieval",
    "selector_reward",
    "generator_reward",
    "grpo",
    "filtering",
    "pipeline",
    "benchmark",
    "endpoint",
];

impl RunConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            retrieval: self.retrieval.clone(),
            selector_reward: self.selector_reward.clone(),
            generator_reward: self.generator_reward.clone(),
            grpo: self.grpo.clone(),
            filtering: self.filtering.clone(),
            pipeline: self.pipeline.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        if self.run.mode == Mode::Remote && self.endpoint.is_none() {
            return Err(Error::Config("remote mode needs an [endpoint] section".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Write the resolved configuration into `dir/resolved_config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn parse_override(spec: &str) -> Result<(String, String, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form section.key=value")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key `{key}` must be section.key")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    Ok((section.to_owned(), field.to_owned(), value))
}

/// Resolve a configuration from TOML text plus overrides.
pub fn resolve_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for key in table.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown section `{key}`")));
        }
    }
    for spec in overrides {
        let (section, field, value) = parse_override(spec)?;
        if !SECTIONS.contains(&section.as_str()) {
            return Err(Error::Config(format!("unknown section `{section}`")));
        }
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(field, value);
            }
            _ => return Err(Error::Config(format!("`{section}` is not a section"))),
        }
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load a configuration file (or defaults when `path` is `None`) and apply overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    resolve_config(&text, overrides)
}
