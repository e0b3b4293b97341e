//! Learning-rate schedule and AdamW.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_same_structure, ParameterSet};

/// Everything one pretraining run needs beyond the encoder shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Sequences consumed per optimizer step.
    pub batch_size: usize,
    /// Micro-batches each step is split into; must divide batch_size.
    pub accum_steps: usize,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Anchor for the decay schedule when a run deliberately stops early;
    /// `None` decays to zero at `total_steps`. Lets a short run retrace the
    /// first steps of a longer one exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_steps: Option<u64>,
    pub mask_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            accum_steps: 1,
            lr_peak: 2e-4,
            warmup_steps: 10,
            total_steps: 100,
            schedule_steps: None,
            mask_rate: 0.15,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accum_steps == 0 {
            return Err(Error::config("batch_size and accum_steps must be >= 1"));
        }
        if self.batch_size % self.accum_steps != 0 {
            return Err(Error::config(format!(
                "accum_steps {} must divide batch_size {}",
                self.accum_steps, self.batch_size
            )));
        }
        if self.total_steps > 0 && self.warmup_steps >= self.schedule_anchor() {
            return Err(Error::config(format!(
                "warmup_steps {} must be below the schedule end {}",
                self.warmup_steps,
                self.schedule_anchor()
            )));
        }
        if let Some(anchor) = self.schedule_steps {
            if anchor < self.total_steps {
                return Err(Error::config(format!(
                    "schedule_steps {anchor} shorter than total_steps {}",
                    self.total_steps
                )));
            }
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::config(format!(
                "mask_rate {} outside (0, 1)",
                self.mask_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 || self.lr_peak < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::config("eps must be positive; lr and decay nonnegative"));
        }
        Ok(())
    }

    /// Step at which the decay schedule reaches zero.
    pub fn schedule_anchor(&self) -> u64 {
        self.schedule_steps.unwrap_or(self.total_steps)
    }
}

/// Piecewise-linear schedule: 0 to `lr_peak` across warmup, then down to
/// exactly 0 at the schedule anchor.
pub fn lr_at(cfg: &TrainConfig, step: u64) -> Result<f64> {
    let anchor = cfg.schedule_anchor();
    if step > anchor {
        return Err(Error::input(format!(
            "step {step} beyond the schedule end {anchor}"
        )));
    }
    if step <= cfg.warmup_steps {
        if cfg.warmup_steps == 0 {
            return Ok(cfg.lr_peak);
        }
        return Ok(cfg.lr_peak * step as f64 / cfg.warmup_steps as f64);
    }
    let decay_span = (anchor - cfg.warmup_steps) as f64;
    Ok(cfg.lr_peak * (anchor - step) as f64 / decay_span)
}

/// First and second moment estimates plus the step counter for bias
/// correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(template: &ParameterSet) -> Self {
        let mut m = template.clone();
        m.scale(0.0);
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One AdamW update: bias-corrected Adam step plus decoupled weight decay,
/// applied uniformly to every parameter.
pub fn adamw_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    check_same_structure(params, grads)?;
    if !grads.all_finite() {
        return Err(Error::numeric("non-finite gradient passed to the optimizer"));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);

    let g = grads.tensors();
    let mut m = state.m.tensors_mut();
    let mut v = state.v.tensors_mut();
    for (ti, (_, p_slice)) in params.tensors_mut().into_iter().enumerate() {
        let g_slice = g[ti].1;
        let m_slice = &mut m[ti].1;
        let v_slice = &mut v[ti].1;
        for i in 0..p_slice.len() {
            let grad = g_slice[i];
            m_slice[i] = cfg.beta1 * m_slice[i] + (1.0 - cfg.beta1) * grad;
            v_slice[i] = cfg.beta2 * v_slice[i] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m_slice[i] / bc1;
            let v_hat = v_slice[i] / bc2;
            p_slice[i] -=
                lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p_slice[i]);
        }
    }
    Ok(())
}
