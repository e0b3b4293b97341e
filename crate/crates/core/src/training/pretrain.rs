//! The pretraining loop: shuffled epochs, masked batches, AdamW updates,
//! checkpoints, and an append-only loss trace.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::model::{
    backward_mlm, init_params, save_checkpoint, EncoderConfig, ParameterSet,
};
use crate::seeds::{self, tags};

use super::mask::apply_mask;
use super::optim::{adamw_step, lr_at, AdamState, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tokens_seen: u64,
}

/// Per-step training record. Steps are 1-based and strictly increasing;
/// `tokens_seen` is exactly step x batch_size x sequence length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

const TRACE_HEADER: &str = "step,loss,lr,tokens_seen";

impl LossTrace {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.step, r.loss, r.lr, r.tokens_seen)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (idx, line) in body.lines().enumerate() {
            if idx == 0 {
                if line.trim() != TRACE_HEADER {
                    return Err(Error::record(path, 1, "unexpected loss-trace header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::record(path, idx + 1, "expected 4 columns"));
            }
            let parse_err = |what: &str| Error::record(path, idx + 1, format!("bad {what}"));
            rows.push(TraceRow {
                step: cols[0].parse().map_err(|_| parse_err("step"))?,
                loss: cols[1].parse().map_err(|_| parse_err("loss"))?,
                lr: cols[2].parse().map_err(|_| parse_err("lr"))?,
                tokens_seen: cols[3].parse().map_err(|_| parse_err("tokens_seen"))?,
            });
        }
        let trace = LossTrace { rows };
        trace.check_monotone(path)?;
        Ok(trace)
    }

    fn check_monotone(&self, path: &Path) -> Result<()> {
        for w in self.rows.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::input(format!(
                    "{}: steps not strictly increasing at {}",
                    path.display(),
                    w[1].step
                )));
            }
        }
        Ok(())
    }
}

/// Appends one row, creating the file with a header first if needed.
fn append_trace_row(path: &Path, row: &TraceRow) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        writeln!(file, "{TRACE_HEADER}")?;
    }
    writeln!(file, "{},{},{},{}", row.step, row.loss, row.lr, row.tokens_seen)?;
    Ok(())
}

/// Where and how often to write checkpoints. `every_steps == 0` keeps only
/// the final checkpoint; no directory means no files at all. `at_steps`
/// forces additional checkpoints at the named steps.
#[derive(Debug, Clone, Default)]
pub struct CheckpointPolicy {
    pub dir: Option<PathBuf>,
    pub every_steps: u64,
    pub at_steps: Vec<u64>,
}

impl CheckpointPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn into_dir(dir: impl Into<PathBuf>, every_steps: u64) -> Self {
        CheckpointPolicy {
            dir: Some(dir.into()),
            every_steps,
            at_steps: Vec::new(),
        }
    }

    pub fn at_steps(dir: impl Into<PathBuf>, steps: Vec<u64>) -> Self {
        CheckpointPolicy {
            dir: Some(dir.into()),
            every_steps: 0,
            at_steps: steps,
        }
    }

    pub fn path_for_step(&self, step: u64) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("step_{step:07}.bin")))
    }
}

#[derive(Debug)]
pub struct PretrainOutput {
    pub params: ParameterSet,
    pub trace: LossTrace,
    pub checkpoints: Vec<PathBuf>,
}

/// The shuffled-epoch data order, computed arithmetically so any step's batch
/// can be reproduced without replaying earlier steps.
pub(crate) fn batch_indices(seed: u64, n: usize, step: u64, batch_size: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    assert!(n > 0);
    let consumed = step * batch_size as u64;
    let mut epoch = consumed / n as u64;
    let mut offset = (consumed % n as u64) as usize;
    let mut out = Vec::with_capacity(batch_size);
    while out.len() < batch_size {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeds::rng(seed, &[tags::EPOCH, epoch]));
        let take = (batch_size - out.len()).min(n - offset);
        out.extend_from_slice(&perm[offset..offset + take]);
        epoch += 1;
        offset = 0;
    }
    out
}

/// Run `total_steps` optimizer steps of masked-language-model training.
/// Each step consumes `batch_size` sequences split into `accum_steps` equal
/// micro-batches; per-sequence gradients are averaged before the update.
/// On a non-finite loss the last good parameters are checkpointed and an
/// error naming the step is returned.
pub fn pretrain(
    cfg: &EncoderConfig,
    train: &TrainConfig,
    sequences: &[TokenSequence],
    policy: &CheckpointPolicy,
    trace_path: Option<&Path>,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    train.validate()?;
    if sequences.is_empty() {
        return Err(Error::input("no training sequences"));
    }
    let window = sequences[0].ids.len();
    if sequences.iter().any(|s| s.ids.len() != window) {
        return Err(Error::input("training sequences have mixed lengths"));
    }
    if window > cfg.max_seq {
        return Err(Error::input(format!(
            "sequence length {window} exceeds max_seq {}",
            cfg.max_seq
        )));
    }
    if let Some(dir) = &policy.dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut params = init_params(cfg, train.seed);
    let mut state = AdamState::new(&params);
    let mut trace = LossTrace::default();
    let mut checkpoints = Vec::new();
    let micro = train.batch_size / train.accum_steps;

    for step in 0..train.total_steps {
        let idxs = batch_indices(train.seed, sequences.len(), step, train.batch_size);

        // One accumulator for the whole batch keeps the floating-point
        // summation order independent of the micro-batch split.
        let mut grad_sum = ParameterSet::zeros(cfg);
        let mut loss_sum = 0.0;
        let mut failed: Option<Error> = None;
        'micro: for chunk in idxs.chunks(micro).enumerate() {
            let (chunk_no, chunk_idxs) = chunk;
            let results: Vec<Result<(f64, ParameterSet)>> = chunk_idxs
                .par_iter()
                .enumerate()
                .map(|(j, &sidx)| {
                    let within_batch = (chunk_no * micro + j) as u64;
                    let mask_seed = seeds::derive(train.seed, &[tags::MASK, step, within_batch]);
                    let masked = apply_mask(&sequences[sidx], train.mask_rate, mask_seed)?;
                    backward_mlm(
                        cfg,
                        &params,
                        &masked.input_ids,
                        &masked.pad_mask,
                        &masked.masked_positions,
                        &masked.targets,
                    )
                })
                .collect();
            for r in results {
                match r {
                    Ok((loss, grads)) => {
                        loss_sum += loss;
                        grad_sum.add_assign(&grads);
                    }
                    Err(e) => {
                        failed = Some(e);
                        break 'micro;
                    }
                }
            }
        }

        let batch_loss = loss_sum / train.batch_size as f64;
        if failed.is_none() && !batch_loss.is_finite() {
            failed = Some(Error::numeric(format!("non-finite batch loss {batch_loss}")));
        }
        if failed.is_none() && !grad_sum.all_finite() {
            failed = Some(Error::numeric("non-finite gradients"));
        }
        if let Some(cause) = failed {
            if let Some(path) = policy.path_for_step(step) {
                save_checkpoint(&path, cfg, &params, step, train.seed)?;
                log::error!("aborting at step {step}; last good state at {}", path.display());
            }
            return Err(Error::numeric(format!(
                "training aborted at step {step}: {cause}"
            )));
        }

        grad_sum.scale(1.0 / train.batch_size as f64);
        let lr = lr_at(train, step + 1)?;
        adamw_step(&mut params, &grad_sum, &mut state, lr, train).map_err(|e| {
            Error::numeric(format!("training aborted at step {step}: {e}"))
        })?;

        let row = TraceRow {
            step: step + 1,
            loss: batch_loss,
            lr,
            tokens_seen: (step + 1) * (train.batch_size * window) as u64,
        };
        if let Some(path) = trace_path {
            append_trace_row(path, &row)?;
        }
        trace.rows.push(row);

        let due = (policy.every_steps > 0 && (step + 1) % policy.every_steps == 0)
            || policy.at_steps.contains(&(step + 1));
        let last = step + 1 == train.total_steps;
        if due || last {
            if let Some(path) = policy.path_for_step(step + 1) {
                save_checkpoint(&path, cfg, &params, step + 1, train.seed)?;
                checkpoints.push(path);
            }
        }
    }

    Ok(PretrainOutput {
        params,
        trace,
        checkpoints,
    })
}
