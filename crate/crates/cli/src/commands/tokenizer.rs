//! `scalelab tokenizer …` — byte-level BPE training.

use std::path::PathBuf;

use anyhow::Result;
use clap::Subcommand;
use scalelab_core::tokenizer::{preset_vocab, TokenizerModel};
use serde::{Deserialize, Serialize};

use crate::manifest::Run;
use crate::util::{announce_config, load_config, read_corpus};
use crate::Ctx;

#[derive(Subcommand)]
pub enum TokenizerCmd {
    /// Learn a merge list from a corpus
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Target vocabulary size (specials + bytes + merges)
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Use a named preset's vocabulary size instead
        #[arg(long, conflicts_with = "vocab_size")]
        preset: Option<String>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct TrainParams {
    vocab_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { vocab_size: 512 }
    }
}

pub fn run(ctx: &Ctx, cmd: &TokenizerCmd) -> Result<()> {
    match cmd {
        TokenizerCmd::Train {
            corpus,
            vocab_size,
            preset,
        } => {
            let mut p: TrainParams = load_config(ctx.config.as_deref())?;
            if let Some(name) = preset {
                p.vocab_size = preset_vocab(name)?;
            }
            if let Some(v) = vocab_size {
                p.vocab_size = *v;
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[corpus])?;
            let docs = read_corpus(corpus)?;
            let model = TokenizerModel::train(&docs, p.vocab_size)?;
            let path = ctx.out.join("tokenizer.json");
            model.save(&path)?;
            println!(
                "trained tokenizer: vocab {}, {} merges",
                model.vocab_size(),
                model.merges().len()
            );
            run.finish(vec![path])
        }
    }
}
