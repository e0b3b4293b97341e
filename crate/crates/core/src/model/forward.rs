//! Encoder forward pass: embeddings, attention/MLP stack, MLM logits.
//!
//! Full bidirectional attention over every non-pad pair of positions; pad
//! positions are excluded as attention keys. The pass records every
//! intermediate the backward pass needs, so `forward_cached` is the single
//! source of truth for the network function.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};

use super::config::{EncoderConfig, NormPlacement};
use super::params::{LayerParams, ParameterSet};

pub(crate) const LN_EPS: f64 = 1e-5;

/// What callers outside the crate see: logits plus the per-layer token
/// representations, `hidden_states[0]` being the embedding-layer output and
/// `hidden_states[layers]` the representation the MLM head consumes.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Array2<f64>,
    pub hidden_states: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// Input actually fed to the attention projections (normed under pre).
    pub attn_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head post-softmax attention, each [seq x seq].
    pub attn: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub ctx: Array2<f64>,
    /// Norm owned by the attention sublayer (of the post-attention residual
    /// under post placement, of the layer input under pre).
    pub ln_a: LnCache,
    /// Input fed to the MLP.
    pub mlp_in: Array2<f64>,
    /// MLP pre-activation.
    pub u: Array2<f64>,
    /// gelu(u).
    pub gu: Array2<f64>,
    /// Norm owned by the MLP sublayer.
    pub ln_m: LnCache,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    /// The shared extra norm: applied to the raw embeddings (post) or to the
    /// last layer's output (pre).
    pub ln_extra: LnCache,
    pub layers: Vec<LayerCache>,
    /// Representation consumed by the MLM head and by pooling.
    pub final_hidden: Array2<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> LnCache {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *is = 1.0 / (var + LN_EPS).sqrt();
        let isl = *is;
        row.mapv_inplace(|v| v * isl);
    }
    let out = &xhat * &g.view().insert_axis(Axis(0)) + &b.view().insert_axis(Axis(0));
    LnCache { xhat, inv_std, out }
}

pub(crate) fn gelu(u: f64) -> f64 {
    const C1: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const C2: f64 = 0.044715;
    0.5 * u * (1.0 + (C1 * (u + C2 * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    const C1: f64 = 0.797_884_560_802_865_4;
    const C2: f64 = 0.044715;
    let t = (C1 * (u + C2 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * C1 * (1.0 + 3.0 * C2 * u * u)
}

/// Row-wise softmax with max subtraction. Rows with no finite entry are the
/// caller's bug; pad masking guarantees at least one finite score per row.
pub(crate) fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn attention(
    cfg: &EncoderConfig,
    lp: &LayerParams,
    y: &Array2<f64>,
    pad_mask: &[bool],
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>, Array2<f64>) {
    let t = y.nrows();
    let hs = cfg.head_size;
    let q = y.dot(&lp.wq) + &lp.bq.view().insert_axis(Axis(0));
    let k = y.dot(&lp.wk) + &lp.bk.view().insert_axis(Axis(0));
    let v = y.dot(&lp.wv) + &lp.bv.view().insert_axis(Axis(0));

    let scale = 1.0 / (hs as f64).sqrt();
    let mut attn = Vec::with_capacity(cfg.heads);
    let mut ctx = Array2::zeros((t, cfg.hidden));
    for hidx in 0..cfg.heads {
        let cols = s![.., hidx * hs..(hidx + 1) * hs];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|x| x * scale);
        for (j, &keep) in pad_mask.iter().enumerate() {
            if !keep {
                scores.column_mut(j).fill(f64::NEG_INFINITY);
            }
        }
        softmax_rows(&mut scores);
        let ch = scores.dot(&vh);
        ctx.slice_mut(cols).assign(&ch);
        attn.push(scores);
    }
    let out = ctx.dot(&lp.wo) + &lp.bo.view().insert_axis(Axis(0));
    (q, k, v, attn, ctx, out)
}

fn mlp(lp: &LayerParams, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let u = y.dot(&lp.w1) + &lp.b1.view().insert_axis(Axis(0));
    let gu = u.mapv(gelu);
    let out = gu.dot(&lp.w2) + &lp.b2.view().insert_axis(Axis(0));
    (u, gu, out)
}

pub(crate) fn validate_input(cfg: &EncoderConfig, ids: &[u32], pad_mask: &[bool]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::input("empty input sequence"));
    }
    if ids.len() > cfg.max_seq {
        return Err(Error::input(format!(
            "sequence of {} tokens exceeds max_seq {}",
            ids.len(),
            cfg.max_seq
        )));
    }
    if pad_mask.len() != ids.len() {
        return Err(Error::input("pad mask length differs from sequence length"));
    }
    if !pad_mask.iter().any(|&m| m) {
        return Err(Error::input("sequence is entirely padding"));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab) {
        return Err(Error::input(format!(
            "token id {bad} outside vocab of {}",
            cfg.vocab
        )));
    }
    Ok(())
}

pub(crate) fn forward_cached(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    ids: &[u32],
    pad_mask: &[bool],
) -> Result<(ForwardTrace, ForwardCache)> {
    validate_input(cfg, ids, pad_mask)?;
    let t = ids.len();

    let mut e0 = Array2::zeros((t, cfg.hidden));
    for (pos, &id) in ids.iter().enumerate() {
        let row = &params.token_emb.row(id as usize) + &params.pos_emb.row(pos);
        e0.row_mut(pos).assign(&row);
    }

    let pre = cfg.norm_placement == NormPlacement::Pre;
    let (mut x, ln_embed) = if pre {
        (e0, None)
    } else {
        let ln = layer_norm(&e0, &params.norm_g, &params.norm_b);
        (ln.out.clone(), Some(ln))
    };

    let mut hidden_states = Vec::with_capacity(cfg.layers + 1);
    hidden_states.push(x.clone());

    let mut layer_caches = Vec::with_capacity(cfg.layers);
    for lp in &params.layers {
        let x_in = x;
        let (attn_in, ln_a_pre) = if pre {
            let ln = layer_norm(&x_in, &lp.ln1_g, &lp.ln1_b);
            (ln.out.clone(), Some(ln))
        } else {
            (x_in.clone(), None)
        };
        let (q, k, v, attn, ctx, attn_out) = attention(cfg, lp, &attn_in, pad_mask);
        let r1 = &x_in + &attn_out;

        let (ln_a, after_attn) = if pre {
            (ln_a_pre.unwrap(), r1)
        } else {
            let ln = layer_norm(&r1, &lp.ln1_g, &lp.ln1_b);
            let out = ln.out.clone();
            (ln, out)
        };

        let (mlp_in, ln_m_pre) = if pre {
            let ln = layer_norm(&after_attn, &lp.ln2_g, &lp.ln2_b);
            (ln.out.clone(), Some(ln))
        } else {
            (after_attn.clone(), None)
        };
        let (u, gu, mlp_out) = mlp(lp, &mlp_in);
        let r2 = &after_attn + &mlp_out;

        let (ln_m, x_out) = if pre {
            (ln_m_pre.unwrap(), r2)
        } else {
            let ln = layer_norm(&r2, &lp.ln2_g, &lp.ln2_b);
            let out = ln.out.clone();
            (ln, out)
        };

        layer_caches.push(LayerCache {
            attn_in,
            q,
            k,
            v,
            attn,
            ctx,
            ln_a,
            mlp_in,
            u,
            gu,
            ln_m,
        });
        hidden_states.push(x_out.clone());
        x = x_out;
    }

    let (final_hidden, ln_extra) = if pre {
        let ln = layer_norm(&x, &params.norm_g, &params.norm_b);
        let out = ln.out.clone();
        // Downstream consumers see the normed representation.
        *hidden_states.last_mut().expect("layers+1 entries") = out.clone();
        (out, ln)
    } else {
        (x, ln_embed.expect("post placement built the embedding norm"))
    };

    let emb_t = match &params.head {
        Some(head) => head.t(),
        None => params.token_emb.t(),
    };
    let logits = final_hidden.dot(&emb_t) + &params.head_bias.view().insert_axis(Axis(0));

    Ok((
        ForwardTrace {
            logits,
            hidden_states,
        },
        ForwardCache {
            ln_extra,
            layers: layer_caches,
            final_hidden,
        },
    ))
}

/// Run the encoder and MLM head. Pure: same inputs, same outputs.
pub fn forward(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    ids: &[u32],
    pad_mask: &[bool],
) -> Result<ForwardTrace> {
    forward_cached(cfg, params, ids, pad_mask).map(|(trace, _)| trace)
}
