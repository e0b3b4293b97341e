//! `scalelab pretrain` — masked-LM pre-training with checkpoints and a loss
//! trace.

use std::path::PathBuf;

use anyhow::{ensure, Result};
use clap::Args;
use scalelab_core::corpus::DEFAULT_MIN_KEEP;
use scalelab_core::model::EncoderConfig;
use scalelab_core::training::{pretrain, CheckpointPolicy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::manifest::Run;
use crate::util::{announce_config, load_config, load_sequences, read_tokenizer};
use crate::Ctx;

#[derive(Args)]
pub struct PretrainArgs {
    /// Training corpus (JSONL)
    #[arg(long)]
    corpus: PathBuf,
    /// Trained tokenizer file
    #[arg(long)]
    tokenizer: PathBuf,
    /// Override: optimizer steps
    #[arg(long)]
    steps: Option<u64>,
    /// Override: sequences per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override: peak learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Override: fraction of content positions masked
    #[arg(long)]
    mask_rate: Option<f64>,
    /// Override: sequence window length
    #[arg(long)]
    window: Option<usize>,
    /// Override: checkpoint cadence in steps (0 = final only)
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainParams {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Fixed window the corpus is chunked into.
    pub window: usize,
    /// Shortest document tail kept as a padded window.
    pub min_keep: usize,
    pub checkpoint_every: u64,
}

impl Default for PretrainParams {
    fn default() -> Self {
        PretrainParams {
            encoder: EncoderConfig::new(2, 64, 2, 32, 512, 64),
            train: TrainConfig::default(),
            window: 64,
            min_keep: DEFAULT_MIN_KEEP,
            checkpoint_every: 0,
        }
    }
}

pub fn run(ctx: &Ctx, args: &PretrainArgs) -> Result<()> {
    let mut p: PretrainParams = load_config(ctx.config.as_deref())?;
    if let Some(steps) = args.steps {
        p.train.total_steps = steps;
        p.train.warmup_steps = p.train.warmup_steps.min(steps.saturating_sub(1));
    }
    if let Some(b) = args.batch_size {
        p.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        p.train.lr_peak = lr;
    }
    if let Some(m) = args.mask_rate {
        p.train.mask_rate = m;
    }
    if let Some(w) = args.window {
        p.window = w;
    }
    if let Some(c) = args.checkpoint_every {
        p.checkpoint_every = c;
    }
    if let Some(seed) = ctx.seed {
        p.train.seed = seed;
    }
    ensure!(
        p.window <= p.encoder.max_seq,
        "window {} exceeds the encoder's max_seq {}",
        p.window,
        p.encoder.max_seq
    );
    let config = announce_config(&p)?;
    let run = Run::start(&ctx.out, config, &[&args.corpus, &args.tokenizer])?;

    let tokenizer = read_tokenizer(&args.tokenizer)?;
    ensure!(
        tokenizer.vocab_size() <= p.encoder.vocab,
        "tokenizer vocab {} exceeds the encoder's vocab {}",
        tokenizer.vocab_size(),
        p.encoder.vocab
    );
    let seqs = load_sequences(&args.corpus, &tokenizer, p.window, p.min_keep)?;
    log::info!("{} training sequences of length {}", seqs.len(), p.window);

    let ckpt_dir = ctx.out.join("checkpoints");
    let policy = CheckpointPolicy::into_dir(&ckpt_dir, p.checkpoint_every);
    let trace_path = ctx.out.join("trace.csv");
    let out = pretrain(&p.encoder, &p.train, &seqs, &policy, Some(&trace_path))?;

    let last = out.trace.rows.last();
    println!(
        "trained {} steps; final batch loss {}",
        p.train.total_steps,
        last.map(|r| r.loss.to_string()).unwrap_or_else(|| "n/a".into())
    );
    let mut artifacts = vec![trace_path];
    artifacts.extend(out.checkpoints);
    run.finish(artifacts)
}
