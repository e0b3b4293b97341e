//! `scalelab eval …` — checkpoint evaluation: held-out loss, loss variance
//! across bootstrap sizes, and retrieval metrics.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::Subcommand;
use scalelab_core::corpus::{encode_window, TokenSequence};
use scalelab_core::eval::{repeated_eval, test_error};
use scalelab_core::retrieval::{
    embed_sequences, map_at_r, mrr, read_clone_records, read_pairs, score_matrix, RetrievalPair,
};
use scalelab_core::tokenizer::TokenizerModel;
use serde::{Deserialize, Serialize};

use crate::manifest::Run;
use crate::util::{announce_config, load_config, load_sequences, read_checkpoint, read_corpus, read_tokenizer};
use crate::Ctx;

#[derive(Subcommand)]
pub enum EvalCmd {
    /// Mean masked-prediction loss on a held-out corpus
    Loss {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        mask_rate: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Loss variability across repeated bootstrap evaluations per test size
    Uncertainty {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Test-set sizes, e.g. 100,1000,10000
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        mask_rate: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Mean reciprocal rank of code search queries against a document corpus
    Mrr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// JSONL of {query, positive_id} pairs
        #[arg(long)]
        queries: PathBuf,
        /// Candidate document corpus (JSONL)
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Mean average precision at R over a clone-detection set
    Map {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// JSONL of {content, class_id} records
        #[arg(long)]
        clones: PathBuf,
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct LossParams {
    mask_rate: f64,
    window: usize,
    min_keep: usize,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            mask_rate: 0.15,
            window: 64,
            min_keep: 1,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct UncertaintyParams {
    sizes: Vec<usize>,
    trials: usize,
    mask_rate: f64,
    window: usize,
    min_keep: usize,
}

impl Default for UncertaintyParams {
    fn default() -> Self {
        UncertaintyParams {
            sizes: vec![100, 1000, 10000],
            trials: 50,
            mask_rate: 0.15,
            window: 64,
            min_keep: 1,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct RetrievalEvalParams {
    window: usize,
}

impl Default for RetrievalEvalParams {
    fn default() -> Self {
        RetrievalEvalParams { window: 64 }
    }
}

/// Encode query texts and resolve each pair's positive document to its index
/// in the candidate list (= corpus order).
pub fn search_task(
    tokenizer: &TokenizerModel,
    pairs: &[RetrievalPair],
    docs_path: &Path,
    window: usize,
) -> Result<(Vec<TokenSequence>, Vec<TokenSequence>, Vec<usize>)> {
    let corpus = read_corpus(docs_path)?;
    let queries = pairs
        .iter()
        .map(|p| encode_window(tokenizer, &p.query, window).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let candidates = corpus
        .documents
        .iter()
        .map(|d| encode_window(tokenizer, &d.content, window).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let mut gold = Vec::with_capacity(pairs.len());
    for p in pairs {
        let idx = corpus
            .documents
            .iter()
            .position(|d| d.id == p.positive_id as u64)
            .with_context(|| format!("positive_id {} not in the document corpus", p.positive_id))?;
        gold.push(idx);
    }
    Ok((queries, candidates, gold))
}

pub fn run(ctx: &Ctx, cmd: &EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Loss {
            checkpoint,
            data,
            tokenizer,
            mask_rate,
            window,
        } => {
            let mut p: LossParams = load_config(ctx.config.as_deref())?;
            if let Some(m) = mask_rate {
                p.mask_rate = *m;
            }
            if let Some(w) = window {
                p.window = (*w).max(2);
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[checkpoint, data, tokenizer])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            let seqs = load_sequences(data, &tok, p.window, p.min_keep)?;
            let loss = test_error(
                &ckpt.config,
                &ckpt.params,
                &seqs,
                p.mask_rate,
                ctx.seed_or_default(),
            )?;
            let path = ctx.out.join("loss.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "loss": loss,
                    "sequences": seqs.len(),
                    "mask_rate": p.mask_rate,
                    "seed": ctx.seed_or_default(),
                }))?,
            )?;
            println!("test loss {loss} over {} sequences", seqs.len());
            run.finish(vec![path])
        }
        EvalCmd::Uncertainty {
            checkpoint,
            data,
            tokenizer,
            sizes,
            trials,
            mask_rate,
            window,
        } => {
            let mut p: UncertaintyParams = load_config(ctx.config.as_deref())?;
            if let Some(s) = sizes {
                p.sizes = s.clone();
            }
            if let Some(t) = trials {
                p.trials = *t;
            }
            if let Some(m) = mask_rate {
                p.mask_rate = *m;
            }
            if let Some(w) = window {
                p.window = (*w).max(2);
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[checkpoint, data, tokenizer])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            let pool = load_sequences(data, &tok, p.window, p.min_keep)?;
            let report = repeated_eval(
                &ckpt.config,
                &ckpt.params,
                &pool,
                &p.sizes,
                p.trials,
                p.mask_rate,
                ctx.seed_or_default(),
            )?;
            let trials_path = ctx.out.join("trials.csv");
            report.save_csv(&trials_path)?;
            let json_path = ctx.out.join("report.json");
            report.save_json(&json_path)?;
            let stats_path = ctx.out.join("stats.csv");
            let mut stats = String::from("size,trials,mean,std,min,q25,median,q75,max\n");
            for s in &report.per_size {
                stats.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    s.size,
                    s.trials,
                    s.stats.mean,
                    s.stats.std,
                    s.stats.min,
                    s.stats.q25,
                    s.stats.median,
                    s.stats.q75,
                    s.stats.max
                ));
                println!("size {}: mean {} std {}", s.size, s.stats.mean, s.stats.std);
            }
            std::fs::write(&stats_path, stats)?;
            run.finish(vec![trials_path, stats_path, json_path])
        }
        EvalCmd::Mrr {
            checkpoint,
            tokenizer,
            queries,
            docs,
            window,
        } => {
            let mut p: RetrievalEvalParams = load_config(ctx.config.as_deref())?;
            if let Some(w) = window {
                p.window = (*w).max(2);
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[checkpoint, tokenizer, queries, docs])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            ensure!(
                p.window <= ckpt.config.max_seq,
                "window {} exceeds the checkpoint's max_seq {}",
                p.window,
                ckpt.config.max_seq
            );
            let pairs = read_pairs(queries)?;
            if pairs.is_empty() {
                bail!("{}: no query pairs", queries.display());
            }
            let (q_seqs, d_seqs, gold) = search_task(&tok, &pairs, docs, p.window)?;
            let q_emb = embed_sequences(&ckpt.config, &ckpt.params, &q_seqs)?;
            let d_emb = embed_sequences(&ckpt.config, &ckpt.params, &d_seqs)?;
            let scores = score_matrix(&q_emb, &d_emb)?;
            let value = mrr(&scores, &gold)?;
            let path = ctx.out.join("mrr.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "mrr": value,
                    "queries": gold.len(),
                    "candidates": d_emb.len(),
                }))?,
            )?;
            println!(
                "MRR {value} over {} queries, {} candidates",
                gold.len(),
                d_emb.len()
            );
            run.finish(vec![path])
        }
        EvalCmd::Map {
            checkpoint,
            tokenizer,
            clones,
            window,
        } => {
            let mut p: RetrievalEvalParams = load_config(ctx.config.as_deref())?;
            if let Some(w) = window {
                p.window = (*w).max(2);
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[checkpoint, tokenizer, clones])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            let records = read_clone_records(clones)?;
            let seqs = records
                .iter()
                .map(|r| encode_window(&tok, &r.content, p.window).map_err(Into::into))
                .collect::<Result<Vec<_>>>()?;
            let emb = embed_sequences(&ckpt.config, &ckpt.params, &seqs)?;
            let scores = score_matrix(&emb, &emb)?;
            let labels: Vec<usize> = records.iter().map(|r| r.class_id).collect();
            let value = map_at_r(&scores, &labels)?;
            let path = ctx.out.join("map.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "map_at_r": value,
                    "items": records.len(),
                }))?,
            )?;
            println!("MAP@R {value} over {} items", records.len());
            run.finish(vec![path])
        }
    }
}
