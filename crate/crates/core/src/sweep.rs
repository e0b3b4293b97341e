//! One-dimension-at-a-time experiment sweeps: train a run per scale level,
//! evaluate every level on the same held-out set, and leave behind manifests
//! the fitting stage can consume.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::eval::{flops_from_counts, test_error, ComputeLedger};
use crate::model::{load_checkpoint, EncoderConfig};
use crate::scaling::{ScaleDimension, ScalePoint};
use crate::seeds::{self, tags};
use crate::training::{pretrain, CheckpointPolicy, TrainConfig};

/// Declarative description of a sweep. Levels are interpreted per dimension:
/// training-set size in sequences (data), hidden width (model), or optimizer
/// steps (compute).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub dimension: ScaleDimension,
    pub levels: Vec<u64>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        if self.levels.len() < 3 {
            return Err(Error::config(format!(
                "a sweep needs at least 3 levels, got {}",
                self.levels.len()
            )));
        }
        if !self.levels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("levels must be strictly increasing"));
        }
        if self.levels[0] == 0 {
            return Err(Error::config("levels must be positive"));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed { message: String },
}

/// Everything recorded about one level of a sweep; enough to re-derive the
/// fit input and to prove levels differed only in the swept dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub dimension: ScaleDimension,
    pub level: u64,
    /// scale value handed to the power-law fit
    pub x: f64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub test_error: Option<f64>,
    pub ledger: Option<ComputeLedger>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval_checksum: String,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub dir: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Content checksum of an evaluation set, recorded in every manifest so that
/// shared-eval-set usage is verifiable after the fact.
pub fn sequences_checksum(seqs: &[TokenSequence]) -> String {
    let mut hasher = Sha256::new();
    for seq in seqs {
        hasher.update((seq.ids.len() as u64).to_le_bytes());
        for &id in &seq.ids {
            hasher.update(id.to_le_bytes());
        }
        hasher.update((seq.content_len as u64).to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn level_dir(out_dir: &Path, idx: usize) -> PathBuf {
    out_dir.join(format!("level_{idx}"))
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn read_manifest(path: &Path) -> Result<RunRecord> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&body).map_err(|e| Error::record(path.display().to_string(), 1, e.to_string()))
}

/// Encoder shape for one model-sweep level: the hidden width scales, heads
/// scale with it at fixed head size, and the MLP keeps its 4x ratio.
fn model_level_config(base: &EncoderConfig, hidden: usize) -> Result<EncoderConfig> {
    if hidden % base.head_size != 0 {
        return Err(Error::config(format!(
            "hidden width {hidden} is not a multiple of head size {}",
            base.head_size
        )));
    }
    let cfg = EncoderConfig {
        hidden,
        heads: hidden / base.head_size,
        intermediate: 4 * hidden,
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn eval_seed(train: &TrainConfig) -> u64 {
    seeds::derive(train.seed, &[tags::EVAL_TRIAL, 0])
}

struct LevelPlan {
    cfg: EncoderConfig,
    train: TrainConfig,
    x: f64,
    train_slice: usize,
    checkpoint_step: u64,
}

fn plan_level(spec: &SweepSpec, level: u64, pool_len: usize) -> Result<LevelPlan> {
    match spec.dimension {
        ScaleDimension::Data => {
            let n = level as usize;
            if n > pool_len {
                return Err(Error::input(format!(
                    "level wants {n} training sequences but the pool has {pool_len}"
                )));
            }
            Ok(LevelPlan {
                cfg: spec.encoder.clone(),
                train: spec.train.clone(),
                x: level as f64,
                train_slice: n,
                checkpoint_step: spec.train.total_steps,
            })
        }
        ScaleDimension::Model => {
            let cfg = model_level_config(&spec.encoder, level as usize)?;
            let x = cfg.count_params().0 as f64;
            Ok(LevelPlan {
                cfg,
                train: spec.train.clone(),
                x,
                train_slice: pool_len,
                checkpoint_step: spec.train.total_steps,
            })
        }
        ScaleDimension::Compute => {
            let longest = *spec.levels.last().unwrap();
            let mut train = spec.train.clone();
            train.total_steps = longest;
            train.schedule_steps = Some(longest.max(train.schedule_anchor()));
            let window = spec.encoder.max_seq as u64;
            let tokens = level * train.batch_size as u64 * window;
            let x = flops_from_counts(spec.encoder.count_params().0, tokens);
            Ok(LevelPlan {
                cfg: spec.encoder.clone(),
                train,
                x,
                train_slice: pool_len,
                checkpoint_step: level,
            })
        }
    }
}

/// Train and evaluate every level of the sweep. Completed levels (manifest
/// already present) are skipped; failed levels are recorded and the sweep
/// continues. The compute dimension trains one long run and evaluates its
/// intermediate checkpoints.
pub fn run_sweep(
    spec: &SweepSpec,
    train_pool: &[TokenSequence],
    eval_set: &[TokenSequence],
    out_dir: &Path,
) -> Result<SweepOutcome> {
    spec.validate()?;
    if train_pool.is_empty() || eval_set.is_empty() {
        return Err(Error::input("training pool and evaluation set must be non-empty"));
    }
    std::fs::create_dir_all(out_dir)?;
    spec.write(&out_dir.join("sweep.json"))?;
    let eval_checksum = sequences_checksum(eval_set);

    // the compute dimension shares one long training run across levels
    if spec.dimension == ScaleDimension::Compute {
        ensure_compute_checkpoints(spec, train_pool, out_dir)?;
    }

    let mut records = Vec::with_capacity(spec.levels.len());
    for (idx, &level) in spec.levels.iter().enumerate() {
        let dir = level_dir(out_dir, idx);
        let manifest = manifest_path(&dir);
        if manifest.exists() {
            let existing = read_manifest(&manifest)?;
            if existing.status == RunStatus::Complete {
                log::info!("level {idx} already complete; skipping");
                records.push(existing);
                continue;
            }
        }
        std::fs::create_dir_all(&dir)?;

        let record = match run_level(spec, level, idx, train_pool, eval_set, out_dir, &dir) {
            Ok(mut r) => {
                r.eval_checksum = eval_checksum.clone();
                r
            }
            Err(e) => {
                log::error!("level {idx} (value {level}) failed: {e}");
                RunRecord {
                    dimension: spec.dimension,
                    level,
                    x: 0.0,
                    status: RunStatus::Failed {
                        message: e.to_string(),
                    },
                    test_error: None,
                    ledger: None,
                    encoder: spec.encoder.clone(),
                    train: spec.train.clone(),
                    eval_checksum: eval_checksum.clone(),
                    checkpoint: None,
                }
            }
        };
        write_atomic(&manifest, serde_json::to_string_pretty(&record)?.as_bytes())?;
        records.push(record);
    }
    Ok(SweepOutcome {
        records,
        dir: out_dir.to_path_buf(),
    })
}

fn compute_run_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("compute_run")
}

fn ensure_compute_checkpoints(
    spec: &SweepSpec,
    train_pool: &[TokenSequence],
    out_dir: &Path,
) -> Result<()> {
    let dir = compute_run_dir(out_dir);
    let plan = plan_level(spec, *spec.levels.last().unwrap(), train_pool.len())?;
    let policy = CheckpointPolicy::at_steps(&dir, spec.levels.clone());
    let missing = spec
        .levels
        .iter()
        .any(|&s| !policy.path_for_step(s).map(|p| p.exists()).unwrap_or(false));
    if !missing {
        log::info!("all compute checkpoints present; skipping the long run");
        return Ok(());
    }
    std::fs::create_dir_all(&dir)?;
    let trace = dir.join("trace.csv");
    if trace.exists() {
        std::fs::remove_file(&trace)?;
    }
    pretrain(&plan.cfg, &plan.train, train_pool, &policy, Some(&trace))?;
    Ok(())
}

fn run_level(
    spec: &SweepSpec,
    level: u64,
    idx: usize,
    train_pool: &[TokenSequence],
    eval_set: &[TokenSequence],
    out_dir: &Path,
    dir: &Path,
) -> Result<RunRecord> {
    let plan = plan_level(spec, level, train_pool.len())?;
    let window = plan.cfg.max_seq as u64;

    let (params, checkpoint) = if spec.dimension == ScaleDimension::Compute {
        let policy = CheckpointPolicy::at_steps(compute_run_dir(out_dir), spec.levels.clone());
        let path = policy.path_for_step(plan.checkpoint_step).unwrap();
        let ckpt = load_checkpoint(&path)?;
        if ckpt.step != plan.checkpoint_step {
            return Err(Error::input(format!(
                "checkpoint {} holds step {} but level {idx} expects {}",
                path.display(),
                ckpt.step,
                plan.checkpoint_step
            )));
        }
        (ckpt.params, path)
    } else {
        let policy = CheckpointPolicy::into_dir(dir, 0);
        let out = pretrain(
            &plan.cfg,
            &plan.train,
            &train_pool[..plan.train_slice],
            &policy,
            Some(&dir.join("trace.csv")),
        )?;
        let path = out
            .checkpoints
            .last()
            .cloned()
            .ok_or_else(|| Error::input("training produced no checkpoint"))?;
        (out.params, path)
    };

    let err = test_error(
        &plan.cfg,
        &params,
        eval_set,
        plan.train.mask_rate,
        eval_seed(&spec.train),
    )?;
    let tokens = plan.checkpoint_step * plan.train.batch_size as u64 * window;
    Ok(RunRecord {
        dimension: spec.dimension,
        level,
        x: plan.x,
        status: RunStatus::Complete,
        test_error: Some(err),
        ledger: Some(ComputeLedger::new(&plan.cfg, plan.checkpoint_step, tokens)),
        encoder: plan.cfg,
        train: plan.train,
        eval_checksum: String::new(), // filled by the caller
        checkpoint: Some(checkpoint),
    })
}

/// Gather completed runs from a sweep directory into fit-ready points.
/// Incomplete levels produce a warning, not an error; unreadable manifests
/// are fatal and name the offending file.
pub fn collect(out_dir: &Path) -> Result<Vec<ScalePoint>> {
    let spec = SweepSpec::read(&out_dir.join("sweep.json"))?;
    let mut points = Vec::new();
    for idx in 0..spec.levels.len() {
        let manifest = manifest_path(&level_dir(out_dir, idx));
        if !manifest.exists() {
            log::warn!("level {idx} has no manifest yet; skipping");
            continue;
        }
        let record = read_manifest(&manifest)?;
        match record.status {
            RunStatus::Complete => points.push(ScalePoint {
                x: record.x,
                e: record.test_error.ok_or_else(|| {
                    Error::record(
                        manifest.display().to_string(),
                        1,
                        "complete run lacks a test error",
                    )
                })?,
                dimension: record.dimension,
            }),
            RunStatus::Failed { message } => {
                log::warn!("level {idx} failed ({message}); excluded from fit");
            }
        }
    }
    if points.is_empty() {
        return Err(Error::input(format!(
            "{}: no completed levels",
            out_dir.display()
        )));
    }
    Ok(points)
}
