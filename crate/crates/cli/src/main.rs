//! `scalelab` — drive the laboratory from the shell: corpus preparation,
//! tokenizer training, masked-LM pre-training, scale sweeps, curve fits,
//! retrieval fine-tuning, and linear probes.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage error.

mod commands;
mod manifest;
mod util;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{corpus, eval, finetune, fit, pretrain, probe, report, sweep, tokenizer};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "scalelab",
    version,
    about = "Desk-scale masked-LM laboratory: corpora, tokenizers, training sweeps, \
             power-law fits, retrieval, and probing"
)]
struct Cli {
    /// Base seed for anything stochastic (overrides config-file seeds)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON config file; explicit flags take precedence over its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory [default: $SCALELAB_OUT, else ./runs]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Cap on worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare document corpora (ingest, synthesize, sample, split)
    Corpus {
        #[command(subcommand)]
        cmd: corpus::CorpusCmd,
    },
    /// Train a byte-level BPE tokenizer
    Tokenizer {
        #[command(subcommand)]
        cmd: tokenizer::TokenizerCmd,
    },
    /// Pre-train a masked-LM encoder on a corpus
    Pretrain(pretrain::PretrainArgs),
    /// Run or collect one-dimension-at-a-time scale sweeps
    Sweep {
        #[command(subcommand)]
        cmd: sweep::SweepCmd,
    },
    /// Evaluate checkpoints: test loss, loss variance, retrieval metrics
    Eval {
        #[command(subcommand)]
        cmd: eval::EvalCmd,
    },
    /// Fit a power law to scale/error points and plot it
    Fit(fit::FitArgs),
    /// Contrastively fine-tune a checkpoint for retrieval
    Finetune {
        #[command(subcommand)]
        cmd: finetune::FinetuneCmd,
    },
    /// Generate probe labels and train linear probes on frozen layers
    Probe {
        #[command(subcommand)]
        cmd: probe::ProbeCmd,
    },
    /// Summarize completed sweeps into fitted curves and one report
    Report(report::ReportArgs),
}

/// Global context handed to every subcommand.
pub struct Ctx {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

impl Ctx {
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        config: cli.config.clone(),
        out: util::resolve_out(cli.out.as_deref()),
    };
    match &cli.command {
        Command::Corpus { cmd } => corpus::run(&ctx, cmd),
        Command::Tokenizer { cmd } => tokenizer::run(&ctx, cmd),
        Command::Pretrain(args) => pretrain::run(&ctx, args),
        Command::Sweep { cmd } => sweep::run(&ctx, cmd),
        Command::Eval { cmd } => eval::run(&ctx, cmd),
        Command::Fit(args) => fit::run(&ctx, args),
        Command::Finetune { cmd } => finetune::run(&ctx, cmd),
        Command::Probe { cmd } => probe::run(&ctx, cmd),
        Command::Report(args) => report::run(&ctx, args),
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
