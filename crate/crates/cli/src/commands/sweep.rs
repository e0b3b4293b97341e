//! `scalelab sweep …` — one-dimension-at-a-time scale sweeps and their
//! collection into fit-ready points.

use std::path::PathBuf;

use anyhow::{ensure, Result};
use clap::Subcommand;
use scalelab_core::model::EncoderConfig;
use scalelab_core::scaling::ScaleDimension;
use scalelab_core::sweep::{collect, run_sweep, RunStatus, SweepSpec};
use scalelab_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::manifest::Run;
use crate::util::{
    announce_config, load_config, load_sequences, read_tokenizer, write_points_csv,
};
use crate::Ctx;

#[derive(Subcommand)]
pub enum SweepCmd {
    /// Train and evaluate every level of a sweep
    Run {
        /// Training pool corpus (JSONL)
        #[arg(long)]
        data: PathBuf,
        /// Held-out evaluation corpus shared by all levels (JSONL)
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Override: swept dimension (data | model | compute)
        #[arg(long)]
        dimension: Option<String>,
        /// Override: scale levels, ascending
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u64>>,
    },
    /// Gather completed levels into a points CSV
    Collect {
        /// Sweep output directory (from `sweep run`)
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub dimension: ScaleDimension,
    pub levels: Vec<u64>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub window: usize,
    pub min_keep: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            dimension: ScaleDimension::Data,
            levels: Vec::new(),
            encoder: EncoderConfig::new(2, 32, 2, 16, 512, 32),
            train: TrainConfig::default(),
            window: 32,
            min_keep: 8,
        }
    }
}

pub fn run(ctx: &Ctx, cmd: &SweepCmd) -> Result<()> {
    match cmd {
        SweepCmd::Run {
            data,
            eval,
            tokenizer,
            dimension,
            levels,
        } => {
            let mut p: SweepParams = load_config(ctx.config.as_deref())?;
            if let Some(d) = dimension {
                p.dimension = d.parse()?;
            }
            if let Some(l) = levels {
                p.levels = l.clone();
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
            let run = Run::start(&ctx.out, config, &[data, eval, tokenizer])?;

            let tok = read_tokenizer(tokenizer)?;
            let pool = load_sequences(data, &tok, p.window, p.min_keep)?;
            let eval_seqs = load_sequences(eval, &tok, p.window, p.min_keep)?;
            log::info!(
                "{} pool sequences, {} eval sequences",
                pool.len(),
                eval_seqs.len()
            );

            let spec = SweepSpec {
                dimension: p.dimension,
                levels: p.levels.clone(),
                encoder: p.encoder.clone(),
                train: p.train.clone(),
            };
            let outcome = run_sweep(&spec, &pool, &eval_seqs, &ctx.out)?;
            let mut complete = 0usize;
            for (idx, r) in outcome.records.iter().enumerate() {
                match &r.status {
                    RunStatus::Complete => {
                        complete += 1;
                        println!(
                            "level {idx}: x={} test_error={}",
                            r.x,
                            r.test_error.unwrap()
                        );
                    }
                    RunStatus::Failed { message } => {
                        println!("level {idx}: FAILED ({message})");
                    }
                }
            }
            println!("{complete}/{} levels complete", outcome.records.len());
            let artifacts = (0..outcome.records.len())
                .map(|i| ctx.out.join(format!("level_{i}/manifest.json")))
                .collect();
            run.finish(artifacts)
        }
        SweepCmd::Collect { dir } => {
            let config = announce_config(&serde_json::json!({ "dir": dir }))?;
            let run = Run::start(&ctx.out, config, &[])?;
            let points = collect(dir)?;
            let path = ctx.out.join("points.csv");
            write_points_csv(&path, &points)?;
            for p in &points {
                println!("{},{},{}", p.dimension, p.x, p.e);
            }
            run.finish(vec![path])
        }
    }
}
