use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use evsel_core::backend::{Decoding, GeneratorBackend, QueryContext, RemoteGenerator, SimulatedGenerator};
use evsel_core::config::{Mode, RunConfig, TrainConfig};
use evsel_core::corpus::{load_corpus, load_corpus_with_queries, Corpus, DenseScores};
use evsel_core::filter::apply_filter;
use evsel_core::grammar::parse_generation;
use evsel_core::pipeline::{
    build_contexts, build_report, counterfactual_analysis, difficulty_distribution, evaluate_em, k_curve,
    recall_at_k, run_iterative, split_heldout, train_generator_epoch, train_selector_epoch, DifficultySettings,
    EpochIndex, EpochLog, RewardRecord, SelectionMethod,
};
use evsel_core::policy::PolicyParams;
use evsel_core::reward::generator_reward;
use evsel_core::synth::generate_synthetic_benchmark;
use evsel_core::{Error, Result};
use serde::Serialize;

use crate::{Command, Policies};

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    if !matches!(command, Command::RewardDebug { .. }) {
        let path = cfg.echo(&cfg.run.output_dir)?;
        tracing::info!(path = %path.display(), "resolved configuration written");
    }
    match command {
        Command::GenCorpus { queries, seed, out } => gen_corpus(cfg, *queries, *seed, out.as_deref()),
        Command::Retrieve => retrieve(cfg),
        Command::Filter { policies } => filter(cfg, policies),
        Command::TrainSelector { policies, iteration } => train_selector(cfg, policies, *iteration),
        Command::TrainGenerator { policies, iteration } => train_generator(cfg, policies, *iteration),
        Command::Train => train(cfg),
        Command::Eval { policies, k } => eval(cfg, policies, *k),
        Command::KCurve { policies, ks } => curve(cfg, policies, ks.as_deref()),
        Command::Difficulty { policies } => difficulty(cfg, policies),
        Command::Counterfactual { policies, k } => counterfactual(cfg, policies, *k),
        Command::Recall { ks } => recall(cfg, ks.as_deref()),
        Command::RewardDebug { rewards, limit } => reward_debug(cfg, rewards.as_deref(), *limit),
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.run.output_dir.join(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_jsonl<'a, T: Serialize + 'a>(w: &mut impl Write, path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    for row in rows {
        let line = serde_json::to_string(row).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    writeln!(w, "{text}").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_data(cfg: &RunConfig) -> Result<Corpus> {
    let corpus_path = cfg
        .run
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("run.corpus is not set".into()))?;
    for p in [Some(corpus_path), cfg.run.queries.as_ref(), cfg.run.dense_scores.as_ref()]
        .into_iter()
        .flatten()
    {
        if !p.is_file() {
            return Err(Error::Config(format!("no such file: {}", p.display())));
        }
    }
    let corpus = match &cfg.run.queries {
        Some(q) => load_corpus_with_queries(corpus_path, q)?,
        None => load_corpus(corpus_path)?,
    };
    if corpus.queries().is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} holds no query records", corpus_path.display()),
        });
    }
    if cfg.run.mode == Mode::Simulator && !corpus.is_labeled() {
        return Err(Error::Unsupported(
            "simulator mode needs a labeled corpus (every document labeled golden, misleading or irrelevant)".into(),
        ));
    }
    Ok(corpus)
}

fn contexts(cfg: &RunConfig) -> Result<Vec<QueryContext>> {
    let corpus = load_data(cfg)?;
    let dense = cfg.run.dense_scores.as_ref().map(DenseScores::load).transpose()?;
    build_contexts(&corpus, &cfg.retrieval, dense.as_ref())
}

fn splits(cfg: &RunConfig) -> Result<(Vec<QueryContext>, Vec<QueryContext>)> {
    Ok(split_heldout(contexts(cfg)?, cfg.pipeline.heldout_fraction))
}

fn load_policy(path: Option<&Path>, init: &[f64]) -> Result<PolicyParams> {
    match path {
        Some(p) => PolicyParams::load(p),
        None => PolicyParams::new(init.to_vec()),
    }
}

fn selector(cfg: &RunConfig, p: &Policies) -> Result<PolicyParams> {
    load_policy(p.selector.as_deref(), &cfg.pipeline.selector_init)
}

fn simulator(cfg: &TrainConfig, params: PolicyParams) -> SimulatedGenerator {
    SimulatedGenerator::new(params, cfg.pipeline.n_ground, cfg.generator_reward.clone())
        .with_temperature(cfg.pipeline.gen_temperature)
}

fn sim_generator(cfg: &RunConfig, p: &Policies) -> Result<SimulatedGenerator> {
    let params = load_policy(p.generator.as_deref(), &cfg.pipeline.generator_init)?;
    Ok(simulator(&cfg.train(), params))
}

/// The configured generator backend. `eval` selects the evaluation decoding
/// for the simulator; rollouts for solvability estimates always sample.
fn backend(cfg: &RunConfig, p: &Policies, eval: bool) -> Result<Box<dyn GeneratorBackend>> {
    match cfg.run.mode {
        Mode::Simulator => {
            let decoding = if eval { cfg.pipeline.eval_decoding } else { Decoding::Sample };
            Ok(Box::new(sim_generator(cfg, p)?.with_decoding(decoding)))
        }
        Mode::Remote => {
            if p.generator.is_some() {
                return Err(Error::Config("--generator applies to the simulator only".into()));
            }
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("remote mode needs an [endpoint] section".into()))?;
            Ok(Box::new(RemoteGenerator::new(endpoint, cfg.generator_reward.clone())?))
        }
    }
}

fn require_simulator(cfg: &RunConfig, what: &str) -> Result<()> {
    if cfg.run.mode != Mode::Simulator {
        return Err(Error::Unsupported(format!(
            "{what} needs the simulated generator; remote endpoints are evaluation-only"
        )));
    }
    Ok(())
}

fn gen_corpus(cfg: &RunConfig, queries: i64, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let seed = seed.unwrap_or(cfg.pipeline.seed);
    let corpus = generate_synthetic_benchmark(seed, queries, &cfg.benchmark)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| out_path(cfg, "corpus.jsonl"));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    corpus.write(&path)?;
    println!(
        "wrote {} documents and {} queries to {}",
        corpus.documents().len(),
        corpus.queries().len(),
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PoolRow<'a> {
    query_id: &'a str,
    doc_ids: Vec<&'a str>,
    scores: Vec<f64>,
    features: &'a [Vec<f64>],
}

fn retrieve(cfg: &RunConfig) -> Result<()> {
    let ctxs = contexts(cfg)?;
    let path = out_path(cfg, "pools.jsonl");
    let mut w = create(&path)?;
    let rows: Vec<PoolRow> = ctxs
        .iter()
        .map(|c| PoolRow {
            query_id: &c.query.id,
            doc_ids: c.pool.entries.iter().map(|e| e.doc_id.as_str()).collect(),
            scores: c.pool.scores(),
            features: &c.features,
        })
        .collect();
    write_jsonl(&mut w, &path, &rows)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("wrote {} candidate pools to {}", rows.len(), path.display());
    Ok(())
}

fn filter(cfg: &RunConfig, p: &Policies) -> Result<()> {
    let (train, _) = splits(cfg)?;
    let sel = selector(cfg, p)?;
    let gen = backend(cfg, p, false)?;
    let mut fcfg = cfg.filtering.clone();
    fcfg.enabled = true;
    let (kept, stats) = apply_filter(&train, &sel, cfg.pipeline.k_select, gen.as_ref(), &fcfg, cfg.pipeline.seed, "initial")?;
    let path = out_path(cfg, "filter_report.jsonl");
    let mut w = create(&path)?;
    write_jsonl(&mut w, &path, &stats)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("kept {} of {} training queries; report in {}", kept.len(), train.len(), path.display());
    Ok(())
}

fn write_epoch_logs(cfg: &RunConfig, logs: &[&EpochLog]) -> Result<()> {
    let path = out_path(cfg, "training_log.jsonl");
    let mut w = create(&path)?;
    for log in logs {
        write_jsonl(&mut w, &path, &log.updates)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = out_path(cfg, "rewards.jsonl");
    let mut w = create(&path)?;
    for log in logs {
        write_jsonl(&mut w, &path, &log.rewards)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = out_path(cfg, "skipped.jsonl");
    let mut w = create(&path)?;
    for log in logs {
        write_jsonl(&mut w, &path, &log.skipped)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn train_selector(cfg: &RunConfig, p: &Policies, iteration: usize) -> Result<()> {
    require_simulator(cfg, "selector training")?;
    let tc = cfg.train();
    let (train, _) = splits(cfg)?;
    let sel = selector(cfg, p)?;
    let gen = sim_generator(cfg, p)?;
    let set: Vec<&QueryContext> = if cfg.filtering.enabled {
        let (kept, stats) = apply_filter(&train, &sel, cfg.pipeline.k_select, &gen, &cfg.filtering, cfg.pipeline.seed, "initial")?;
        let path = out_path(cfg, "filter_report.jsonl");
        let mut w = create(&path)?;
        write_jsonl(&mut w, &path, &stats)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        kept.into_iter().map(|i| &train[i]).collect()
    } else {
        train.iter().collect()
    };
    let (next, log) = train_selector_epoch(&set, &sel, &gen, &tc, EpochIndex::single(iteration, set.len()))?;
    next.save(&out_path(cfg, "selector.ckpt"))?;
    write_epoch_logs(cfg, &[&log])?;
    println!(
        "selector epoch over {} queries: mean reward {:.4}, version {}, weights {:?}",
        set.len(),
        mean(&log.mean_rewards()),
        next.version,
        next.weights
    );
    Ok(())
}

fn train_generator(cfg: &RunConfig, p: &Policies, iteration: usize) -> Result<()> {
    require_simulator(cfg, "generator training")?;
    let tc = cfg.train();
    let (train, _) = splits(cfg)?;
    let sel = selector(cfg, p)?;
    let gen = sim_generator(cfg, p)?;
    let all: Vec<&QueryContext> = train.iter().collect();
    let (next, log) = train_generator_epoch(&all, &sel, &gen, &tc, EpochIndex::single(iteration, all.len()))?;
    next.save(&out_path(cfg, "generator.ckpt"))?;
    write_epoch_logs(cfg, &[&log])?;
    println!(
        "generator epoch over {} queries: mean reward {:.4}, version {}, weights {:?}",
        all.len(),
        mean(&log.mean_rewards()),
        next.version,
        next.weights
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    require_simulator(cfg, "training")?;
    let tc = cfg.train();
    let (train, eval) = splits(cfg)?;
    let dir = cfg.run.output_dir.clone();
    let log_path = dir.join("training_log.jsonl");
    let rewards_path = dir.join("rewards.jsonl");
    let skipped_path = dir.join("skipped.jsonl");
    let mut log_w = create(&log_path)?;
    let mut rewards_w = create(&rewards_path)?;
    let mut skipped_w = create(&skipped_path)?;
    let out = run_iterative(&train, &eval, &tc, |it| {
        let idir = dir.join(format!("iter_{}", it.iteration));
        fs::create_dir_all(&idir).map_err(|e| Error::io(&idir, e))?;
        it.selector.save(&idir.join("selector.ckpt"))?;
        it.generator.save(&idir.join("generator.ckpt"))?;
        it.report.write(&idir, "report")?;
        if let Some(stats) = &it.filter_stats {
            let path = idir.join("filter_report.jsonl");
            let mut w = create(&path)?;
            write_jsonl(&mut w, &path, stats)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        for log in [&it.selector_log, &it.generator_log] {
            write_jsonl(&mut log_w, &log_path, &log.updates)?;
            write_jsonl(&mut rewards_w, &rewards_path, &log.rewards)?;
            write_jsonl(&mut skipped_w, &skipped_path, &log.skipped)?;
        }
        println!(
            "iteration {}: EM@{} {:.2}  F1 {:.2}  selector v{}  generator v{}",
            it.iteration, it.report.k, it.report.em, it.report.f1, it.selector.version, it.generator.version
        );
        Ok(())
    })?;
    for (w, path) in [(&mut log_w, &log_path), (&mut rewards_w, &rewards_path), (&mut skipped_w, &skipped_path)] {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    out.baseline.write(&dir, "baseline_report")?;
    let path = dir.join("filter_report.jsonl");
    let mut w = create(&path)?;
    write_jsonl(&mut w, &path, &out.filter_stats)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "baseline EM@{} {:.2}; {} of {} training queries kept by the filter; artifacts in {}",
        out.baseline.k,
        out.baseline.em,
        out.kept.len(),
        train.len(),
        dir.display()
    );
    Ok(())
}

fn eval(cfg: &RunConfig, p: &Policies, k: Option<usize>) -> Result<()> {
    let (_, eval) = splits(cfg)?;
    let mut rc = cfg.clone();
    if let Some(k) = k {
        rc.pipeline.eval_k = k;
    }
    match cfg.run.mode {
        Mode::Simulator => {
            let report = build_report("eval", &eval, &sim_generator(&rc, p)?, &selector(&rc, p)?, &rc.train())?;
            report.write(&rc.run.output_dir, "report")?;
            println!(
                "EM@{} {:.2}  F1 {:.2} over {} queries; report in {}",
                report.k,
                report.em,
                report.f1,
                report.per_query.len(),
                out_path(cfg, "report.json").display()
            );
        }
        Mode::Remote => {
            let gen = backend(&rc, p, true)?;
            let em = evaluate_em(&eval, gen.as_ref(), rc.pipeline.eval_k, rc.pipeline.seed)?;
            write_json(&out_path(cfg, "em.json"), &em)?;
            println!("EM@{} {:.2}  F1 {:.2} over {} queries", em.k, em.em, em.f1, em.per_query.len());
        }
    }
    Ok(())
}

fn curve(cfg: &RunConfig, p: &Policies, ks: Option<&[usize]>) -> Result<()> {
    let (_, eval) = splits(cfg)?;
    let gen = backend(cfg, p, true)?;
    let ks = ks.unwrap_or(&cfg.pipeline.k_curve);
    let c = k_curve(&eval, gen.as_ref(), ks, cfg.pipeline.seed)?;
    write_json(&out_path(cfg, "k_curve.json"), &c)?;
    for (k, em) in &c.points {
        let note = if c.truncated.contains(k) { "  (pool smaller than K)" } else { "" };
        println!("K={k:<4} EM {em:.2}{note}");
    }
    Ok(())
}

fn difficulty(cfg: &RunConfig, p: &Policies) -> Result<()> {
    let (_, eval) = splits(cfg)?;
    let gen = backend(cfg, p, false)?;
    let sel = selector(cfg, p)?;
    let settings = DifficultySettings {
        k_select: cfg.pipeline.k_select,
        k_rollouts: cfg.pipeline.k,
        delta: cfg.selector_reward.delta,
        bins: cfg.pipeline.histogram_bins,
        target: cfg.selector_reward.c,
        seed: cfg.pipeline.seed,
    };
    let mut all = Vec::new();
    for method in [SelectionMethod::TopK, SelectionMethod::TrainedSelector, SelectionMethod::RandomSubset] {
        let d = difficulty_distribution(&eval, method, Some(&sel), gen.as_ref(), &settings)?;
        println!(
            "{:<17} mean|p-c| {:.4}  mass in [0.25,0.75] {:.4}  counts {:?}",
            method.name(),
            d.histogram.mean_abs_dev,
            d.histogram.mid_mass,
            d.histogram.counts
        );
        all.push(d);
    }
    write_json(&out_path(cfg, "difficulty.json"), &all)
}

fn counterfactual(cfg: &RunConfig, p: &Policies, k: Option<usize>) -> Result<()> {
    let (_, eval) = splits(cfg)?;
    let gen = backend(cfg, p, true)?;
    let k = k.unwrap_or(cfg.pipeline.eval_k);
    let cf = counterfactual_analysis(&eval, gen.as_ref(), k, cfg.pipeline.remove_cited_refill, cfg.pipeline.seed)?;
    write_json(&out_path(cfg, "counterfactual.json"), &cf)?;
    println!(
        "K={}  full {:.2}  remove-cited {:.2}  keep-only-cited {:.2}  delta_rm {:.2}",
        cf.k, cf.full, cf.remove_cited, cf.keep_only_cited, cf.delta_rm
    );
    Ok(())
}

fn recall(cfg: &RunConfig, ks: Option<&[usize]>) -> Result<()> {
    let (_, eval) = splits(cfg)?;
    let ks = ks.unwrap_or(&cfg.pipeline.recall_ks);
    let r = recall_at_k(&eval, ks)?;
    write_json(&out_path(cfg, "recall.json"), &r)?;
    for (k, v) in &r {
        println!("Recall@{k:<4} {v:.4}");
    }
    Ok(())
}

fn reward_debug(cfg: &RunConfig, rewards: Option<&Path>, limit: Option<usize>) -> Result<()> {
    let path = rewards.map(Path::to_path_buf).unwrap_or_else(|| out_path(cfg, "rewards.jsonl"));
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RewardRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    let limit = limit.unwrap_or(usize::MAX);
    let sel: Vec<&RewardRecord> = records.iter().filter(|r| matches!(r, RewardRecord::Selector { .. })).collect();
    let gen: Vec<&RewardRecord> = records.iter().filter(|r| matches!(r, RewardRecord::Generator { .. })).collect();
    if !sel.is_empty() {
        println!(
            "{:<5} {:<14} {:>6}  {:<18} {:>6} {:>5} {:>7} {:>7} {:>6} {:>8}",
            "iter", "query", "sample", "indices", "p_hat", "fmt", "r_bdy", "r_rel", "p_cnt", "total"
        );
        for r in sel.iter().take(limit) {
            if let RewardRecord::Selector {
                iteration,
                query_id,
                sample,
                indices,
                p_hat,
                breakdown: b,
                ..
            } = r
            {
                let idx = indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
                println!(
                    "{:<5} {:<14} {:>6}  {:<18} {:>6.3} {:>5} {:>7.4} {:>7.4} {:>6.3} {:>8.4}",
                    iteration, query_id, sample, idx, p_hat, b.r_fmt, b.r_bdy, b.r_rel, b.p_cnt, b.total
                );
            }
        }
    }
    if !gen.is_empty() {
        if !sel.is_empty() {
            println!();
        }
        println!(
            "{:<5} {:<14} {:>6} {:>5} {:>6} {:>4} {:>7} {:>6} {:>7} {:>8}  {}",
            "iter", "query", "sample", "fmt", "f1", "em", "r_acc", "n_cite", "r_cite", "total", "check"
        );
        let mut mismatches = 0;
        for r in gen.iter().take(limit) {
            if let RewardRecord::Generator {
                iteration,
                query_id,
                sample,
                raw,
                n_docs,
                gold_answers,
                breakdown: b,
            } = r
            {
                let again = generator_reward(&parse_generation(raw, *n_docs), gold_answers, &cfg.generator_reward);
                let ok = (again.total - b.total).abs() <= 1e-12;
                mismatches += usize::from(!ok);
                println!(
                    "{:<5} {:<14} {:>6} {:>5} {:>6.3} {:>4} {:>7.4} {:>6} {:>7.2} {:>8.4}  {}",
                    iteration,
                    query_id,
                    sample,
                    b.r_fmt,
                    b.f1,
                    b.em,
                    b.r_acc,
                    b.n_cite,
                    b.r_cite,
                    b.total,
                    if ok { "ok" } else { "MISMATCH" }
                );
            }
        }
        if mismatches > 0 {
            println!("{mismatches} generator reward(s) differ when recomputed under the current configuration");
        }
    }
    println!("{} selector and {} generator reward records in {}", sel.len(), gen.len(), path.display());
    Ok(())
}
