//! `scalelab finetune …` — contrastive fine-tuning of a pre-trained encoder
//! for code search and clone detection, reporting the metric before/after.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Subcommand;
use scalelab_core::corpus::{encode_window, TokenSequence};
use scalelab_core::model::{save_checkpoint, ParameterSet};
use scalelab_core::retrieval::{
    embed_sequences, finetune_contrastive, map_at_r, mrr, read_clone_records, read_pairs,
    score_matrix, DEFAULT_TEMPERATURE,
};
use scalelab_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use super::eval::search_task;
use crate::manifest::Run;
use crate::util::{announce_config, load_config, read_checkpoint, read_tokenizer};
use crate::Ctx;

#[derive(Subcommand)]
pub enum FinetuneCmd {
    /// Fine-tune on (query, code) pairs and report train-set MRR
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// JSONL of {query, positive_id} pairs
        #[arg(long)]
        pairs: PathBuf,
        /// Document corpus the positives come from (JSONL)
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Fine-tune on same-class clone pairs and report MAP@R
    Clone {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// JSONL of {content, class_id} records
        #[arg(long)]
        clones: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneParams {
    pub train: TrainConfig,
    pub temperature: f64,
    pub window: usize,
}

impl Default for FinetuneParams {
    fn default() -> Self {
        FinetuneParams {
            train: TrainConfig {
                total_steps: 30,
                warmup_steps: 3,
                lr_peak: 1e-3,
                batch_size: 8,
                ..TrainConfig::default()
            },
            temperature: DEFAULT_TEMPERATURE,
            window: 64,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_flags(
    p: &mut FinetuneParams,
    steps: &Option<u64>,
    batch_size: &Option<usize>,
    lr: &Option<f64>,
    temperature: &Option<f64>,
    window: &Option<usize>,
    seed: Option<u64>,
) {
    if let Some(s) = steps {
        p.train.total_steps = *s;
        p.train.warmup_steps = p.train.warmup_steps.min(s.saturating_sub(1));
    }
    if let Some(b) = batch_size {
        p.train.batch_size = *b;
    }
    if let Some(l) = lr {
        p.train.lr_peak = *l;
    }
    if let Some(t) = temperature {
        p.temperature = *t;
    }
    if let Some(w) = window {
        p.window = (*w).max(2);
    }
    if let Some(seed) = seed {
        p.train.seed = seed;
    }
}

fn save_outputs(
    ctx: &Ctx,
    cfg: &scalelab_core::model::EncoderConfig,
    params: &ParameterSet,
    losses: &[f64],
    train: &TrainConfig,
) -> Result<Vec<PathBuf>> {
    let ckpt_path = ctx.out.join("finetuned.bin");
    save_checkpoint(&ckpt_path, cfg, params, train.total_steps, train.seed)?;
    let losses_path = ctx.out.join("losses.csv");
    let mut body = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        body.push_str(&format!("{},{}\n", i + 1, l));
    }
    std::fs::write(&losses_path, body)?;
    Ok(vec![ckpt_path, losses_path])
}

pub fn run(ctx: &Ctx, cmd: &FinetuneCmd) -> Result<()> {
    match cmd {
        FinetuneCmd::Search {
            checkpoint,
            tokenizer,
            pairs,
            docs,
            steps,
            batch_size,
            lr,
            temperature,
            window,
        } => {
            let mut p: FinetuneParams = load_config(ctx.config.as_deref())?;
            apply_flags(&mut p, steps, batch_size, lr, temperature, window, ctx.seed);
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[checkpoint, tokenizer, pairs, docs])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            let pair_list = read_pairs(pairs)?;
            if pair_list.is_empty() {
                bail!("{}: no pairs", pairs.display());
            }
            let (q_seqs, d_seqs, gold) = search_task(&tok, &pair_list, docs, p.window)?;
            let train_pairs: Vec<(TokenSequence, TokenSequence)> = q_seqs
                .iter()
                .zip(gold.iter())
                .map(|(q, &g)| (q.clone(), d_seqs[g].clone()))
                .collect();

            let score = |params: &ParameterSet| -> Result<f64> {
                let q = embed_sequences(&ckpt.config, params, &q_seqs)?;
                let d = embed_sequences(&ckpt.config, params, &d_seqs)?;
                Ok(mrr(&score_matrix(&q, &d)?, &gold)?)
            };
            let before = score(&ckpt.params)?;
            let out = finetune_contrastive(
                &ckpt.config,
                &p.train,
                &ckpt.params,
                &train_pairs,
                p.temperature,
            )?;
            let after = score(&out.params)?;

            let mut artifacts = save_outputs(ctx, &ckpt.config, &out.params, &out.losses, &p.train)?;
            let metrics_path = ctx.out.join("mrr.json");
            std::fs::write(
                &metrics_path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "mrr_before": before,
                    "mrr_after": after,
                    "pairs": train_pairs.len(),
                }))?,
            )?;
            artifacts.push(metrics_path);
            println!("train-set MRR {before} -> {after} ({} pairs)", train_pairs.len());
            run.finish(artifacts)
        }
        FinetuneCmd::Clone {
            checkpoint,
            tokenizer,
            clones,
            steps,
            batch_size,
            lr,
            temperature,
            window,
        } => {
            let mut p: FinetuneParams = load_config(ctx.config.as_deref())?;
            apply_flags(&mut p, steps, batch_size, lr, temperature, window, ctx.seed);
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[checkpoint, tokenizer, clones])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            let records = read_clone_records(clones)?;
            let seqs = records
                .iter()
                .map(|r| encode_window(&tok, &r.content, p.window).map_err(Into::into))
                .collect::<Result<Vec<TokenSequence>>>()?;
            let labels: Vec<usize> = records.iter().map(|r| r.class_id).collect();

            // pair every item with the next member of its class, cyclically
            let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for (i, &c) in labels.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            let mut train_pairs = Vec::new();
            for members in by_class.values() {
                if members.len() < 2 {
                    continue;
                }
                for (slot, &i) in members.iter().enumerate() {
                    let j = members[(slot + 1) % members.len()];
                    train_pairs.push((seqs[i].clone(), seqs[j].clone()));
                }
            }
            if train_pairs.is_empty() {
                bail!("every clone class is a singleton; nothing to fine-tune on");
            }

            let score = |params: &ParameterSet| -> Result<f64> {
                let emb = embed_sequences(&ckpt.config, params, &seqs)?;
                Ok(map_at_r(&score_matrix(&emb, &emb)?, &labels)?)
            };
            let before = score(&ckpt.params)?;
            let out = finetune_contrastive(
                &ckpt.config,
                &p.train,
                &ckpt.params,
                &train_pairs,
                p.temperature,
            )?;
            let after = score(&out.params)?;

            let mut artifacts = save_outputs(ctx, &ckpt.config, &out.params, &out.losses, &p.train)?;
            let metrics_path = ctx.out.join("map.json");
            std::fs::write(
                &metrics_path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "map_before": before,
                    "map_after": after,
                    "items": records.len(),
                }))?,
            )?;
            artifacts.push(metrics_path);
            println!("MAP@R {before} -> {after} ({} items)", records.len());
            run.finish(artifacts)
        }
    }
}
