//! `scalelab probe …` — label generation and linear probes over frozen
//! encoder layers.

use std::path::PathBuf;

use anyhow::{bail, ensure, Result};
use clap::Subcommand;
use rand::seq::SliceRandom;
use scalelab_core::corpus::{encode_window, TokenSequence};
use scalelab_core::probing::{
    extract_features, gen_len_labels, gen_typ_labels, layer_sweep, load_label_file,
    probe_accuracy, train_probe, ProbeDataset, ProbeTask, DEFAULT_LEN_EDGES,
};
use scalelab_core::seeds::{self, tags};
use scalelab_core::synth::TYPE_KEYWORDS;
use serde::{Deserialize, Serialize};

use crate::manifest::Run;
use crate::util::{announce_config, load_config, read_checkpoint, read_corpus, read_tokenizer};
use crate::Ctx;

#[derive(Subcommand)]
pub enum ProbeCmd {
    /// Generate label files for the generable tasks (len, typ)
    Gen {
        /// Probe task: len | typ
        #[arg(long)]
        task: String,
        #[arg(long)]
        corpus: PathBuf,
        /// Tokenizer (len only: labels bin the token count)
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        /// len: bin edges, e.g. 50,100,150,200
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<usize>>,
        /// typ: fraction of documents to corrupt
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train one probe on a single frozen layer
    Run {
        /// Probe task: len | ast | cpx | typ
        #[arg(long)]
        task: String,
        /// JSONL of {content, label} records
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Layer index; 0 = embeddings, layers = final output [default: final]
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Probe every layer and plot the accuracy curve
    Layers {
        #[arg(long)]
        task: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct GenParams {
    edges: [usize; 4],
    fraction: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            edges: DEFAULT_LEN_EDGES,
            fraction: 0.5,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct ProbeRunParams {
    window: usize,
    max_imbalance: f64,
}

impl Default for ProbeRunParams {
    fn default() -> Self {
        ProbeRunParams {
            window: 64,
            max_imbalance: 0.5,
        }
    }
}

fn encode_items(
    ds: &ProbeDataset,
    tokenizer: &scalelab_core::TokenizerModel,
    window: usize,
) -> Result<(Vec<TokenSequence>, Vec<usize>)> {
    let seqs = ds
        .items
        .iter()
        .map(|it| encode_window(tokenizer, &it.content, window).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let labels = ds.items.iter().map(|it| it.label).collect();
    Ok((seqs, labels))
}

pub fn run(ctx: &Ctx, cmd: &ProbeCmd) -> Result<()> {
    match cmd {
        ProbeCmd::Gen {
            task,
            corpus,
            tokenizer,
            edges,
            fraction,
        } => {
            let task: ProbeTask = task.parse()?;
            let mut p: GenParams = load_config(ctx.config.as_deref())?;
            if let Some(e) = edges {
                ensure!(e.len() == 4, "--edges needs exactly 4 values");
                p.edges = [e[0], e[1], e[2], e[3]];
            }
            if let Some(f) = fraction {
                p.fraction = *f;
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[corpus])?;
            let docs = read_corpus(corpus)?;
            let ds = match task {
                ProbeTask::Len => {
                    let tok_path = tokenizer
                        .as_ref()
                        .ok_or_else(|| anyhow::anyhow!("len labels need --tokenizer"))?;
                    let tok = read_tokenizer(tok_path)?;
                    gen_len_labels(&docs, &tok, &p.edges)?
                }
                ProbeTask::Typ => {
                    gen_typ_labels(&docs, &TYPE_KEYWORDS, p.fraction, ctx.seed_or_default())?
                }
                ProbeTask::Ast | ProbeTask::Cpx => bail!(
                    "{task} labels come from external analysis tooling; \
                     provide a label file to `probe run` instead"
                ),
            };
            let path = ctx.out.join(format!("labels_{task}.jsonl"));
            scalelab_core::probing::save_label_file(&path, &ds)?;
            println!(
                "wrote {} {task} items, class counts {:?}",
                ds.items.len(),
                ds.class_counts()
            );
            run.finish(vec![path])
        }
        ProbeCmd::Run {
            task,
            labels,
            checkpoint,
            tokenizer,
            layer,
            window,
        } => {
            let task: ProbeTask = task.parse()?;
            let mut p: ProbeRunParams = load_config(ctx.config.as_deref())?;
            if let Some(w) = window {
                p.window = (*w).max(2);
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[labels, checkpoint, tokenizer])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            let ds = load_label_file(labels, task, p.max_imbalance)?;
            let (seqs, label_vec) = encode_items(&ds, &tok, p.window)?;
            ensure!(seqs.len() >= 10, "need at least 10 items for an 80/20 split");
            let layer = layer.unwrap_or(ckpt.config.layers);

            // same split convention as the per-layer sweep
            let seed = ctx.seed_or_default();
            let mut order: Vec<usize> = (0..seqs.len()).collect();
            order.shuffle(&mut seeds::rng(seed, &[tags::PROBE, tags::SPLIT]));
            let n_train = seqs.len() * 8 / 10;
            let pick = |idx: &[usize]| -> (Vec<TokenSequence>, Vec<usize>) {
                (
                    idx.iter().map(|&i| seqs[i].clone()).collect(),
                    idx.iter().map(|&i| label_vec[i]).collect(),
                )
            };
            let (train_seqs, train_labels) = pick(&order[..n_train]);
            let (test_seqs, test_labels) = pick(&order[n_train..]);

            let train_x = extract_features(&ckpt.config, &ckpt.params, &train_seqs, layer)?;
            let test_x = extract_features(&ckpt.config, &ckpt.params, &test_seqs, layer)?;
            let probe = train_probe(&train_x, &train_labels, task.class_count(), seed)?;
            let train_acc = probe_accuracy(&probe, &train_x, &train_labels)?;
            let test_acc = probe_accuracy(&probe, &test_x, &test_labels)?;

            let path = ctx.out.join("probe.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "task": task.to_string(),
                    "layer": layer,
                    "train_acc": train_acc,
                    "test_acc": test_acc,
                    "train_items": train_labels.len(),
                    "test_items": test_labels.len(),
                }))?,
            )?;
            println!("{task} layer {layer}: train acc {train_acc}, test acc {test_acc}");
            run.finish(vec![path])
        }
        ProbeCmd::Layers {
            task,
            labels,
            checkpoint,
            tokenizer,
            window,
        } => {
            let task: ProbeTask = task.parse()?;
            let mut p: ProbeRunParams = load_config(ctx.config.as_deref())?;
            if let Some(w) = window {
                p.window = (*w).max(2);
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[labels, checkpoint, tokenizer])?;
            let ckpt = read_checkpoint(checkpoint)?;
            let tok = read_tokenizer(tokenizer)?;
            let ds = load_label_file(labels, task, p.max_imbalance)?;
            let (seqs, label_vec) = encode_items(&ds, &tok, p.window)?;
            let curve = layer_sweep(
                &ckpt.config,
                &ckpt.params,
                &seqs,
                &label_vec,
                task,
                ctx.seed_or_default(),
                Some(&ctx.out),
            )?;
            for row in &curve {
                println!(
                    "layer {}: train acc {}, test acc {}",
                    row.layer, row.train_acc, row.test_acc
                );
            }
            run.finish(vec![
                ctx.out.join(format!("probe_{task}.csv")),
                ctx.out.join(format!("probe_{task}.svg")),
            ])
        }
    }
}
