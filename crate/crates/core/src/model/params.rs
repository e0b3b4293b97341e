//! Parameter storage, initialization, and flat tensor traversal.
//!
//! Tensors are visited in a fixed declaration order everywhere (checkpoints,
//! the optimizer, gradient checks), so the order in `tensors()` is part of
//! the on-disk format and must not be rearranged.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeds::{self, tags};

use super::config::EncoderConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    /// [vocab x hidden]
    pub token_emb: Array2<f64>,
    /// [max_seq x hidden]
    pub pos_emb: Array2<f64>,
    /// Shared norm pair: embedding norm under post-placement, final norm
    /// under pre-placement. One slot keeps both placements the same size.
    pub norm_g: Array1<f64>,
    pub norm_b: Array1<f64>,
    pub layers: Vec<LayerParams>,
    /// Untied MLM projection [vocab x hidden]; `None` when tied.
    pub head: Option<Array2<f64>>,
    /// [vocab]
    pub head_bias: Array1<f64>,
}

impl ParameterSet {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let h = cfg.hidden;
        let layer = || LayerParams {
            wq: Array2::zeros((h, h)),
            bq: Array1::zeros(h),
            wk: Array2::zeros((h, h)),
            bk: Array1::zeros(h),
            wv: Array2::zeros((h, h)),
            bv: Array1::zeros(h),
            wo: Array2::zeros((h, h)),
            bo: Array1::zeros(h),
            ln1_g: Array1::zeros(h),
            ln1_b: Array1::zeros(h),
            w1: Array2::zeros((h, cfg.intermediate)),
            b1: Array1::zeros(cfg.intermediate),
            w2: Array2::zeros((cfg.intermediate, h)),
            b2: Array1::zeros(h),
            ln2_g: Array1::zeros(h),
            ln2_b: Array1::zeros(h),
        };
        ParameterSet {
            token_emb: Array2::zeros((cfg.vocab, h)),
            pos_emb: Array2::zeros((cfg.max_seq, h)),
            norm_g: Array1::zeros(h),
            norm_b: Array1::zeros(h),
            layers: (0..cfg.layers).map(|_| layer()).collect(),
            head: (!cfg.tied_head).then(|| Array2::zeros((cfg.vocab, h))),
            head_bias: Array1::zeros(cfg.vocab),
        }
    }

    /// Named tensors as contiguous slices, in declaration order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn v(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out: Vec<(String, &[f64])> = Vec::new();
        out.push(("token_emb".into(), s(&self.token_emb)));
        out.push(("pos_emb".into(), s(&self.pos_emb)));
        out.push(("norm_g".into(), v(&self.norm_g)));
        out.push(("norm_b".into(), v(&self.norm_b)));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.wq"), s(&l.wq)));
            out.push((format!("layer{i}.bq"), v(&l.bq)));
            out.push((format!("layer{i}.wk"), s(&l.wk)));
            out.push((format!("layer{i}.bk"), v(&l.bk)));
            out.push((format!("layer{i}.wv"), s(&l.wv)));
            out.push((format!("layer{i}.bv"), v(&l.bv)));
            out.push((format!("layer{i}.wo"), s(&l.wo)));
            out.push((format!("layer{i}.bo"), v(&l.bo)));
            out.push((format!("layer{i}.ln1_g"), v(&l.ln1_g)));
            out.push((format!("layer{i}.ln1_b"), v(&l.ln1_b)));
            out.push((format!("layer{i}.w1"), s(&l.w1)));
            out.push((format!("layer{i}.b1"), v(&l.b1)));
            out.push((format!("layer{i}.w2"), s(&l.w2)));
            out.push((format!("layer{i}.b2"), v(&l.b2)));
            out.push((format!("layer{i}.ln2_g"), v(&l.ln2_g)));
            out.push((format!("layer{i}.ln2_b"), v(&l.ln2_b)));
        }
        if let Some(head) = &self.head {
            out.push(("head".into(), s(head)));
        }
        out.push(("head_bias".into(), v(&self.head_bias)));
        out
    }

    /// Mutable variant of [`tensors`](Self::tensors); identical order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push(("token_emb".into(), self.token_emb.as_slice_mut().expect("standard layout")));
        out.push(("pos_emb".into(), self.pos_emb.as_slice_mut().expect("standard layout")));
        out.push(("norm_g".into(), self.norm_g.as_slice_mut().expect("standard layout")));
        out.push(("norm_b".into(), self.norm_b.as_slice_mut().expect("standard layout")));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.wq"), l.wq.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.bq"), l.bq.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.wk"), l.wk.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.bk"), l.bk.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.wv"), l.wv.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.bv"), l.bv.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.wo"), l.wo.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.bo"), l.bo.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.ln1_g"), l.ln1_g.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.ln1_b"), l.ln1_b.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.w1"), l.w1.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.b1"), l.b1.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.w2"), l.w2.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.b2"), l.b2.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.ln2_g"), l.ln2_g.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{i}.ln2_b"), l.ln2_b.as_slice_mut().expect("standard layout")));
        }
        if let Some(head) = &mut self.head {
            out.push(("head".into(), head.as_slice_mut().expect("standard layout")));
        }
        out.push(("head_bias".into(), self.head_bias.as_slice_mut().expect("standard layout")));
        out
    }

    pub fn num_elements(&self) -> u64 {
        self.tensors().iter().map(|(_, s)| s.len() as u64).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, s)| s.iter().all(|x| x.is_finite()))
    }

    /// Elementwise in-place scale; handy for gradient averaging.
    pub fn scale(&mut self, factor: f64) {
        for (_, s) in self.tensors_mut() {
            for x in s {
                *x *= factor;
            }
        }
    }

    /// Elementwise in-place add of another set with the same shape.
    pub fn add_assign(&mut self, other: &ParameterSet) {
        let theirs = other.tensors();
        for ((name, mine), (other_name, others)) in self.tensors_mut().into_iter().zip(theirs) {
            assert_eq!(name, other_name, "parameter sets differ in structure");
            assert_eq!(mine.len(), others.len());
            for (a, b) in mine.iter_mut().zip(others) {
                *a += b;
            }
        }
    }
}

/// Weight init: normal(0, 0.02) with draws outside three standard deviations
/// rejected. Biases start at zero and norm gains at one.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> ParameterSet {
    let mut rng = seeds::rng(seed, &[tags::INIT]);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let mut draw = move || loop {
        let x: f64 = normal.sample(&mut rng);
        if x.abs() <= 3.0 * 0.02 {
            return x;
        }
    };

    let mut params = ParameterSet::zeros(cfg);
    // Weight matrices get random values in declaration order; vectors keep
    // their role-specific constants.
    for (name, slice) in params.tensors_mut() {
        let is_weight = name.ends_with("emb")
            || name.ends_with(".wq")
            || name.ends_with(".wk")
            || name.ends_with(".wv")
            || name.ends_with(".wo")
            || name.ends_with(".w1")
            || name.ends_with(".w2")
            || name == "head";
        if is_weight {
            for x in slice {
                *x = draw();
            }
        } else if name.ends_with("_g") {
            for x in slice {
                *x = 1.0;
            }
        }
    }
    params
}

/// Shape-compatibility check used by checkpoint loading and the optimizer.
pub fn check_same_structure(a: &ParameterSet, b: &ParameterSet) -> Result<()> {
    let ta = a.tensors();
    let tb = b.tensors();
    if ta.len() != tb.len() {
        return Err(Error::config("parameter sets have different tensor counts"));
    }
    for ((na, sa), (nb, sb)) in ta.iter().zip(&tb) {
        if na != nb || sa.len() != sb.len() {
            return Err(Error::config(format!(
                "parameter mismatch: {na} ({} elems) vs {nb} ({} elems)",
                sa.len(),
                sb.len()
            )));
        }
    }
    Ok(())
}
