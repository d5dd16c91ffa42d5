//! `evsel`: command-line entry points for the evidence-selection laboratory.
//!
//! Every command loads the layered configuration (defaults, then `--config`,
//! then `--set` overrides), echoes it into the output directory and writes its
//! artifacts there. Failures print one JSON line on stderr and exit with the
//! error class code: 2 config, 3 data, 4 endpoint, 5 training divergence.

mod commands;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evsel_core::config::{load_config, RunConfig};
use evsel_core::pipeline::with_threads;
use evsel_core::{Error, Result};
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(name = "evsel", version, about = "Boundary-aware evidence selection: training and analysis")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set selector_reward.c=0.4`. Repeatable; applied after the file.
    #[arg(long = "set", short = 's', value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Shorthand for `--set run.output_dir=<DIR>`.
    #[arg(long, short = 'o', global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Policies {
    /// Selector checkpoint; the configured initial weights when absent.
    #[arg(long)]
    pub selector: Option<PathBuf>,
    /// Generator checkpoint; the configured initial weights when absent.
    #[arg(long)]
    pub generator: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic benchmark (documents and queries, one JSON record per line).
    GenCorpus {
        #[arg(long, default_value_t = 250)]
        queries: i64,
        /// Corpus seed; `pipeline.seed` when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// Destination; `<output_dir>/corpus.jsonl` when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build candidate pools and features for every query.
    Retrieve,
    /// Run training-time filtering over the training split.
    Filter {
        #[command(flatten)]
        policies: Policies,
    },
    /// One selector epoch against a frozen generator.
    TrainSelector {
        #[command(flatten)]
        policies: Policies,
        #[arg(long, default_value_t = 1)]
        iteration: usize,
    },
    /// One generator epoch with a frozen selector.
    TrainGenerator {
        #[command(flatten)]
        policies: Policies,
        #[arg(long, default_value_t = 1)]
        iteration: usize,
    },
    /// Filter once, then alternate selector and generator epochs.
    Train,
    /// Evaluate the generator on raw top-k evidence from the held-out split.
    Eval {
        #[command(flatten)]
        policies: Policies,
        /// Evidence budget; `pipeline.eval_k` when absent.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Exact match as a function of the evidence budget.
    KCurve {
        #[command(flatten)]
        policies: Policies,
        /// Comma-separated budgets; `pipeline.k_curve` when absent.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Solvability histograms for top-k, trained-selector and random evidence.
    Difficulty {
        #[command(flatten)]
        policies: Policies,
    },
    /// Full, Remove-Cited and Keep-Only-Cited exact match.
    Counterfactual {
        #[command(flatten)]
        policies: Policies,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Recall of the candidate pools at several budgets.
    Recall {
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Print the per-component reward table of a reward log.
    RewardDebug {
        /// Reward log; `<output_dir>/rewards.jsonl` when absent.
        #[arg(long)]
        rewards: Option<PathBuf>,
        /// Print at most this many rows.
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn init_logging(cfg: &RunConfig) -> Result<()> {
    let filter = EnvFilter::try_new(&cfg.run.log_level)
        .map_err(|e| Error::Config(format!("bad run.log_level `{}`: {e}", cfg.run.log_level)))?;
    // a second initialization (only possible in-process) keeps the first subscriber
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .try_init();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides;
    if let Some(dir) = &cli.output_dir {
        let dir = toml::Value::String(dir.display().to_string());
        overrides.push(format!("run.output_dir={dir}"));
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    init_logging(&cfg)?;
    let threads = cfg.run.threads;
    with_threads(threads, move || commands::dispatch(&cli.command, &cfg))?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": e.kind(),
                "code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
