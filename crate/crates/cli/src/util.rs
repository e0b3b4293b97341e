//! Shared plumbing for the subcommands: config-file merging, input loading,
//! and small parsers.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scalelab_core::corpus::{chunk_fixed, Corpus, TokenSequence};
use scalelab_core::model::{load_checkpoint, Checkpoint};
use scalelab_core::scaling::{ScaleDimension, ScalePoint};
use scalelab_core::tokenizer::TokenizerModel;

/// Merge precedence for every subcommand: built-in defaults, then the
/// `--config` file, then explicit flags. The caller applies flags afterwards;
/// this handles defaults + file.
pub fn load_config<T>(path: Option<&Path>) -> Result<T>
where
    T: Default + serde::de::DeserializeOwned,
{
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let body = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            serde_json::from_str(&body)
                .with_context(|| format!("cannot parse config file {}", p.display()))
        }
    }
}

/// The resolved configuration is echoed to stderr so a run's exact inputs are
/// visible even when no manifest is consulted.
pub fn announce_config<T: serde::Serialize>(config: &T) -> Result<serde_json::Value> {
    let value = serde_json::to_value(config)?;
    eprintln!("resolved config: {value}");
    Ok(value)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    Corpus::ingest_records(path).with_context(|| format!("corpus {}", path.display()))
}

pub fn read_tokenizer(path: &Path) -> Result<TokenizerModel> {
    TokenizerModel::load(path).with_context(|| format!("tokenizer {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("checkpoint {}", path.display()))
}

/// Corpus file -> fixed-width training sequences.
pub fn load_sequences(
    corpus_path: &Path,
    tokenizer: &TokenizerModel,
    window: usize,
    min_keep: usize,
) -> Result<Vec<TokenSequence>> {
    let corpus = read_corpus(corpus_path)?;
    let seqs = chunk_fixed(&corpus, tokenizer, window, min_keep)?;
    if seqs.is_empty() {
        bail!(
            "{} yields no sequences at window {window} (min tail {min_keep})",
            corpus_path.display()
        );
    }
    Ok(seqs)
}

/// Parse a points CSV with columns `dimension,x,error`; extra columns and
/// `#` comment lines are ignored, as is a leading header.
pub fn read_points_csv(path: &Path) -> Result<Vec<ScalePoint>> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read points file {}", path.display()))?;
    let mut points = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            bail!("{}:{}: expected dimension,x,error", path.display(), lineno + 1);
        }
        if lineno == 0 && fields[1].parse::<f64>().is_err() {
            continue; // header row
        }
        let dimension: ScaleDimension = fields[0]
            .parse()
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), lineno + 1))?;
        let x: f64 = fields[1]
            .parse()
            .with_context(|| format!("{}:{}: bad x value", path.display(), lineno + 1))?;
        let e: f64 = fields[2]
            .parse()
            .with_context(|| format!("{}:{}: bad error value", path.display(), lineno + 1))?;
        points.push(ScalePoint { x, e, dimension });
    }
    if points.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(points)
}

pub fn write_points_csv(path: &Path, points: &[ScalePoint]) -> Result<()> {
    let mut body = String::from("dimension,x,error\n");
    for p in points {
        body.push_str(&format!("{},{},{}\n", p.dimension, p.x, p.e));
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// Output root precedence: `--out`, then `$SCALELAB_OUT`, then `./runs`.
pub fn resolve_out(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("SCALELAB_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs")),
    }
}
