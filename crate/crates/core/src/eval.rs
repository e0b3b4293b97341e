//! Test error, its sampling uncertainty, and compute accounting.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::model::{forward, EncoderConfig, ParameterSet};
use crate::seeds::{self, tags};
use crate::training::{apply_mask, mlm_loss_sum};

/// Stable per-sequence tag so masks depend on sequence identity, not on the
/// position within the test set; evaluation is then order-invariant.
fn sequence_tag(seq: &TokenSequence) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for &id in &seq.ids {
        for b in id.to_le_bytes() {
            eat(b);
        }
    }
    for b in (seq.content_len as u64).to_le_bytes() {
        eat(b);
    }
    h
}

/// Cross-entropy sum and masked-position count for one sequence under the
/// seed-determined mask.
fn sequence_error(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    seq: &TokenSequence,
    mask_rate: f64,
    seed: u64,
) -> Result<(f64, usize)> {
    let mask_seed = seeds::derive(seed, &[tags::MASK, sequence_tag(seq)]);
    let masked = apply_mask(seq, mask_rate, mask_seed)?;
    let trace = forward(cfg, params, &masked.input_ids, &masked.pad_mask)?;
    let sum = mlm_loss_sum(&trace, &masked)?;
    Ok((sum, masked.masked_positions.len()))
}

/// Mean -log p over **all** masked positions of the test set, with each
/// sequence masked once deterministically under `seed`.
pub fn test_error(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    test_set: &[TokenSequence],
    mask_rate: f64,
    seed: u64,
) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let parts: Vec<Result<(u64, f64, usize)>> = test_set
        .par_iter()
        .map(|seq| {
            sequence_error(cfg, params, seq, mask_rate, seed)
                .map(|(sum, n)| (sequence_tag(seq), sum, n))
        })
        .collect();
    let mut parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    // canonical summation order keeps the result independent of set ordering
    parts.sort_unstable_by_key(|&(tag, sum, n)| (tag, sum.to_bits(), n));
    let mut total = 0.0;
    let mut count = 0usize;
    for (_, sum, n) in parts {
        total += sum;
        count += n;
    }
    Ok(total / count as f64)
}

/// Summary statistics of a sample; std uses the n-1 denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn dist_stats(values: &[f64]) -> DistStats {
    assert!(values.len() >= 2, "need at least two values");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // linearly interpolated quantiles over the inclusive range
    let q = |p: f64| -> f64 {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    DistStats {
        mean,
        std: var.sqrt(),
        min: sorted[0],
        q25: q(0.25),
        median: q(0.5),
        q75: q(0.75),
        max: *sorted.last().unwrap(),
    }
}

/// Per-size slice of an uncertainty study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeReport {
    pub size: usize,
    pub trials: usize,
    pub errors: Vec<f64>,
    pub seeds: Vec<u64>,
    pub stats: DistStats,
}

/// Distribution of test error across repeated (subset, mask) realizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mask_rate: f64,
    pub per_size: Vec<SizeReport>,
}

impl EvalReport {
    /// One row per trial: `trial,size,error`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "trial,size,error")?;
        for sr in &self.per_size {
            for (t, e) in sr.errors.iter().enumerate() {
                writeln!(out, "{t},{},{e}", sr.size)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `repeated_eval` with caller-supplied per-trial seeds (shared across
/// sizes). Each trial bootstrap-samples `size` sequences from the pool with
/// replacement, masks them under the trial seed, and records the error.
pub fn repeated_eval_with_seeds(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    pool: &[TokenSequence],
    sizes: &[usize],
    trial_seeds: &[u64],
    mask_rate: f64,
) -> Result<EvalReport> {
    if trial_seeds.len() < 2 {
        return Err(Error::input("need at least two trials"));
    }
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    if max_size == 0 {
        return Err(Error::input("no sizes requested"));
    }
    if pool.len() < max_size {
        return Err(Error::input(format!(
            "pool of {} is smaller than the largest requested size {max_size}",
            pool.len()
        )));
    }

    let mut per_size = Vec::with_capacity(sizes.len());
    for (size_idx, &size) in sizes.iter().enumerate() {
        let mut errors = Vec::with_capacity(trial_seeds.len());
        for &trial_seed in trial_seeds {
            errors.push(bootstrap_trial(
                cfg, params, pool, size, size_idx, trial_seed, mask_rate,
            )?);
        }
        per_size.push(SizeReport {
            size,
            trials: trial_seeds.len(),
            stats: dist_stats(&errors),
            errors,
            seeds: trial_seeds.to_vec(),
        });
    }
    Ok(EvalReport {
        mask_rate,
        per_size,
    })
}

/// Error distribution over `trials` independent (sample, mask) draws for each
/// requested test-set size.
pub fn repeated_eval(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    pool: &[TokenSequence],
    sizes: &[usize],
    trials: usize,
    mask_rate: f64,
    seed: u64,
) -> Result<EvalReport> {
    let trial_seeds: Vec<u64> = (0..trials as u64)
        .map(|t| seeds::derive(seed, &[tags::EVAL_TRIAL, t]))
        .collect();
    repeated_eval_with_seeds(cfg, params, pool, sizes, &trial_seeds, mask_rate)
}

fn bootstrap_trial(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    pool: &[TokenSequence],
    size: usize,
    size_idx: usize,
    trial_seed: u64,
    mask_rate: f64,
) -> Result<f64> {
    use rand::Rng;
    let mut rng = seeds::rng(trial_seed, &[tags::SAMPLE, size_idx as u64]);
    // Multiplicity-weighted evaluation: duplicates from the with-replacement
    // draw share one forward pass.
    let mut mult = std::collections::BTreeMap::new();
    for _ in 0..size {
        *mult.entry(rng.gen_range(0..pool.len())).or_insert(0usize) += 1;
    }
    let entries: Vec<(usize, usize)> = mult.into_iter().collect();
    let parts: Vec<Result<(f64, usize, usize)>> = entries
        .par_iter()
        .map(|&(idx, m)| {
            sequence_error(cfg, params, &pool[idx], mask_rate, trial_seed)
                .map(|(sum, n)| (sum, n, m))
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for p in parts {
        let (sum, n, m) = p?;
        total += sum * m as f64;
        count += n * m;
    }
    Ok(total / count as f64)
}

/// Estimated training cost: 6 FLOPs per parameter per token, using the
/// *total* parameter count.
pub fn flops_estimate(cfg: &EncoderConfig, tokens: u64) -> f64 {
    flops_from_counts(cfg.count_params().0, tokens)
}

pub fn flops_from_counts(total_params: u64, tokens: u64) -> f64 {
    6.0 * total_params as f64 * tokens as f64
}

/// Compute bookkeeping attached to every experiment manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeLedger {
    pub iterations: u64,
    pub tokens_seen: u64,
    pub total_params: u64,
    pub non_embedding_params: u64,
    pub flops: f64,
}

impl ComputeLedger {
    pub fn new(cfg: &EncoderConfig, iterations: u64, tokens_seen: u64) -> Self {
        let (total, non_embedding) = cfg.count_params();
        ComputeLedger {
            iterations,
            tokens_seen,
            total_params: total,
            non_embedding_params: non_embedding,
            flops: flops_from_counts(total, tokens_seen),
        }
    }
}
