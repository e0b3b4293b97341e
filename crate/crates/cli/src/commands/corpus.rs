//! `scalelab corpus …` — build and transform document corpora.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Result};
use clap::Subcommand;
use scalelab_core::corpus::{sample_scaled, split, Corpus, CorpusManifest};
use scalelab_core::synth::synth_generate;
use serde::{Deserialize, Serialize};

use crate::manifest::Run;
use crate::util::{announce_config, load_config, read_corpus};
use crate::Ctx;

#[derive(Subcommand)]
pub enum CorpusCmd {
    /// Validate and normalize a raw JSONL corpus
    Ingest {
        /// JSONL file of {language, content[, id]} records
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic code corpus
    Synth {
        /// Generator preset name
        #[arg(long)]
        preset: Option<String>,
        /// Number of documents
        #[arg(long)]
        count: Option<usize>,
    },
    /// Grow a base corpus by sampling extra documents, keeping language balance
    Sample {
        #[arg(long)]
        base: PathBuf,
        /// Pool of additional documents to draw from
        #[arg(long)]
        pool: PathBuf,
        /// Target size as a multiple of the base corpus
        #[arg(long)]
        multiplier: Option<u64>,
    },
    /// Split one corpus into train/valid/test files
    Split {
        #[arg(long)]
        input: PathBuf,
        /// Three fractions summing to 1, e.g. 0.8,0.1,0.1
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct SynthParams {
    preset: String,
    count: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            preset: "expr".into(),
            count: 1000,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct SampleParams {
    multiplier: u64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams { multiplier: 2 }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct SplitParams {
    ratios: [f64; 3],
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            ratios: [0.8, 0.1, 0.1],
        }
    }
}

fn write_corpus(
    out: &Path,
    corpus: &Corpus,
    sources: Vec<PathBuf>,
    multiplier: Option<u64>,
    ratios: Option<[f64; 3]>,
) -> Result<Vec<PathBuf>> {
    let corpus_path = out.join("corpus.jsonl");
    corpus.write_records(&corpus_path)?;
    let manifest = CorpusManifest {
        source_paths: sources,
        seed: corpus.seed,
        multiplier,
        ratios,
        documents: corpus.len(),
        checksum: corpus.checksum(),
        provenance: corpus.provenance.clone(),
    };
    let manifest_path = out.join("corpus_manifest.json");
    manifest.write(&manifest_path)?;
    Ok(vec![corpus_path, manifest_path])
}

pub fn run(ctx: &Ctx, cmd: &CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Ingest { input } => {
            let config = announce_config(&serde_json::json!({ "input": input }))?;
            let run = Run::start(&ctx.out, config, &[input])?;
            let corpus = read_corpus(input)?;
            let artifacts = write_corpus(&ctx.out, &corpus, vec![input.clone()], None, None)?;
            println!(
                "ingested {} documents ({} languages), checksum {}",
                corpus.len(),
                corpus.language_counts().len(),
                &corpus.checksum()[..12]
            );
            run.finish(artifacts)
        }
        CorpusCmd::Synth { preset, count } => {
            let mut p: SynthParams = load_config(ctx.config.as_deref())?;
            if let Some(preset) = preset {
                p.preset = preset.clone();
            }
            if let Some(count) = count {
                p.count = *count;
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[])?;
            let corpus = synth_generate(&p.preset, p.count, ctx.seed_or_default())?;
            let artifacts = write_corpus(&ctx.out, &corpus, vec![], None, None)?;
            println!(
                "generated {} documents with preset {}, checksum {}",
                corpus.len(),
                p.preset,
                &corpus.checksum()[..12]
            );
            run.finish(artifacts)
        }
        CorpusCmd::Sample {
            base,
            pool,
            multiplier,
        } => {
            let mut p: SampleParams = load_config(ctx.config.as_deref())?;
            if let Some(m) = multiplier {
                p.multiplier = *m;
            }
            ensure!(p.multiplier >= 1, "multiplier must be >= 1");
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[base, pool])?;
            let base_corpus = read_corpus(base)?;
            let pool_corpus = read_corpus(pool)?;
            let sampled = sample_scaled(
                &base_corpus,
                &pool_corpus,
                p.multiplier,
                ctx.seed_or_default(),
            )?;
            let artifacts = write_corpus(
                &ctx.out,
                &sampled,
                vec![base.clone(), pool.clone()],
                Some(p.multiplier),
                None,
            )?;
            println!(
                "sampled {} documents ({}x of {} base documents)",
                sampled.len(),
                p.multiplier,
                base_corpus.len()
            );
            run.finish(artifacts)
        }
        CorpusCmd::Split { input, ratios } => {
            let mut p: SplitParams = load_config(ctx.config.as_deref())?;
            if let Some(r) = ratios {
                ensure!(r.len() == 3, "--ratios needs exactly 3 values");
                p.ratios = [r[0], r[1], r[2]];
            }
            let config = announce_config(&p)?;
            let run = Run::start(&ctx.out, config, &[input])?;
            let corpus = read_corpus(input)?;
            let (train, valid, test) = split(&corpus, p.ratios, ctx.seed_or_default())?;
            let mut artifacts = Vec::new();
            for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
                let path = ctx.out.join(format!("{name}.jsonl"));
                part.write_records(&path)?;
                artifacts.push(path);
            }
            let manifest = CorpusManifest {
                source_paths: vec![input.clone()],
                seed: ctx.seed_or_default(),
                multiplier: None,
                ratios: Some(p.ratios),
                documents: corpus.len(),
                checksum: corpus.checksum(),
                provenance: corpus.provenance.clone(),
            };
            let manifest_path = ctx.out.join("corpus_manifest.json");
            manifest.write(&manifest_path)?;
            artifacts.push(manifest_path);
            println!(
                "split {} documents into {}/{}/{}",
                corpus.len(),
                train.len(),
                valid.len(),
                test.len()
            );
            run.finish(artifacts)
        }
    }
}
