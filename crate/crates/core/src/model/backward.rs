//! Exact gradients for the encoder, derived by hand to mirror the forward
//! pass structure. Every routine consumes the caches written by
//! `forward_cached`; nothing here re-derives an activation.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};

use super::config::{EncoderConfig, NormPlacement};
use super::forward::{forward_cached, gelu_grad, softmax_rows, ForwardTrace, LayerCache, LnCache};
use super::params::{LayerParams, ParameterSet};

/// d(loss)/d(x) plus gain/bias gradients for `y = g * xhat + b`.
fn ln_backward(
    cache: &LnCache,
    g: &Array1<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let h = dy.ncols() as f64;
    let dg = (dy * &cache.xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let dxhat = dy * &g.view().insert_axis(Axis(0));
    let mut dx = Array2::zeros(dy.raw_dim());
    for ((dxhat_row, xhat_row), (mut dx_row, &inv_std)) in dxhat
        .axis_iter(Axis(0))
        .zip(cache.xhat.axis_iter(Axis(0)))
        .zip(dx.axis_iter_mut(Axis(0)).zip(cache.inv_std.iter()))
    {
        let mean_d = dxhat_row.sum() / h;
        let mean_dx = dxhat_row
            .iter()
            .zip(xhat_row.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / h;
        for ((out, &dxh), &xh) in dx_row.iter_mut().zip(dxhat_row.iter()).zip(xhat_row.iter()) {
            *out = inv_std * (dxh - mean_d - xh * mean_dx);
        }
    }
    (dx, dg, db)
}

/// Gradients through one attention sublayer. Returns d(attn input); weight
/// gradients accumulate into `grads`.
fn attention_backward(
    cfg: &EncoderConfig,
    lp: &LayerParams,
    cache: &LayerCache,
    grads: &mut LayerParams,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    let hs = cfg.head_size;
    let scale = 1.0 / (hs as f64).sqrt();
    let y = &cache.attn_in;

    grads.wo += &cache.ctx.t().dot(d_out);
    grads.bo += &d_out.sum_axis(Axis(0));
    let d_ctx = d_out.dot(&lp.wo.t());

    let mut dq = Array2::zeros(y.raw_dim());
    let mut dk = Array2::zeros(y.raw_dim());
    let mut dv = Array2::zeros(y.raw_dim());
    for hidx in 0..cfg.heads {
        let cols = s![.., hidx * hs..(hidx + 1) * hs];
        let a = &cache.attn[hidx];
        let d_ch = d_ctx.slice(cols);
        let vh = cache.v.slice(cols);

        let da = d_ch.dot(&vh.t());
        dv.slice_mut(cols).assign(&a.t().dot(&d_ch));

        // softmax rows: ds = a * (da - rowsum(a * da))
        let mut ds = Array2::zeros(a.raw_dim());
        for ((a_row, da_row), mut ds_row) in a
            .axis_iter(Axis(0))
            .zip(da.axis_iter(Axis(0)))
            .zip(ds.axis_iter_mut(Axis(0)))
        {
            let dot = a_row.iter().zip(da_row.iter()).map(|(x, y)| x * y).sum::<f64>();
            for ((out, &av), &dav) in ds_row.iter_mut().zip(a_row.iter()).zip(da_row.iter()) {
                *out = av * (dav - dot);
            }
        }

        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let mut dqh = ds.dot(&kh);
        dqh.mapv_inplace(|x| x * scale);
        dq.slice_mut(cols).assign(&dqh);
        let mut dkh = ds.t().dot(&qh);
        dkh.mapv_inplace(|x| x * scale);
        dk.slice_mut(cols).assign(&dkh);
    }

    grads.wq += &y.t().dot(&dq);
    grads.bq += &dq.sum_axis(Axis(0));
    grads.wk += &y.t().dot(&dk);
    grads.bk += &dk.sum_axis(Axis(0));
    grads.wv += &y.t().dot(&dv);
    grads.bv += &dv.sum_axis(Axis(0));

    dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t())
}

/// Gradients through one MLP sublayer; returns d(mlp input).
fn mlp_backward(
    lp: &LayerParams,
    cache: &LayerCache,
    grads: &mut LayerParams,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    grads.w2 += &cache.gu.t().dot(d_out);
    grads.b2 += &d_out.sum_axis(Axis(0));
    let mut du = d_out.dot(&lp.w2.t());
    du.zip_mut_with(&cache.u, |d, &u| *d *= gelu_grad(u));
    grads.w1 += &cache.mlp_in.t().dot(&du);
    grads.b1 += &du.sum_axis(Axis(0));
    du.dot(&lp.w1.t())
}

/// Propagate d(final hidden) down the whole stack into a gradient set.
/// `final hidden` means the representation heads and pooling consume, i.e.
/// `hidden_states[layers]` of the trace.
pub(crate) fn backward_stack(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    ids: &[u32],
    cache: &super::forward::ForwardCache,
    d_final: &Array2<f64>,
    grads: &mut ParameterSet,
) {
    let pre = cfg.norm_placement == NormPlacement::Pre;

    // Top of the stack.
    let mut dx = if pre {
        let (dx, dg, db) = ln_backward(&cache.ln_extra, &params.norm_g, d_final);
        grads.norm_g += &dg;
        grads.norm_b += &db;
        dx
    } else {
        d_final.clone()
    };

    for ((lp, lc), lg) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(&mut grads.layers)
        .rev()
    {
        if pre {
            // x_out = r1 + mlp(ln2(r1)); r1 = x_in + attn(ln1(x_in))
            let d_mlp_out = dx.clone();
            let d_mlp_in = mlp_backward(lp, lc, lg, &d_mlp_out);
            let (d_r1_from_mlp, dg2, db2) = ln_backward(&lc.ln_m, &lp.ln2_g, &d_mlp_in);
            lg.ln2_g += &dg2;
            lg.ln2_b += &db2;
            let d_r1 = dx + d_r1_from_mlp;

            let d_attn_out = d_r1.clone();
            let d_attn_in = attention_backward(cfg, lp, lc, lg, &d_attn_out);
            let (d_x_from_attn, dg1, db1) = ln_backward(&lc.ln_a, &lp.ln1_g, &d_attn_in);
            lg.ln1_g += &dg1;
            lg.ln1_b += &db1;
            dx = d_r1 + d_x_from_attn;
        } else {
            // x_out = ln2(x1 + mlp(x1)); x1 = ln1(x_in + attn(x_in))
            let (d_r2, dg2, db2) = ln_backward(&lc.ln_m, &lp.ln2_g, &dx);
            lg.ln2_g += &dg2;
            lg.ln2_b += &db2;
            let d_x1 = &d_r2 + &mlp_backward(lp, lc, lg, &d_r2);

            let (d_r1, dg1, db1) = ln_backward(&lc.ln_a, &lp.ln1_g, &d_x1);
            lg.ln1_g += &dg1;
            lg.ln1_b += &db1;
            dx = &d_r1 + &attention_backward(cfg, lp, lc, lg, &d_r1);
        }
    }

    // Bottom of the stack.
    let d_e0 = if pre {
        dx
    } else {
        let (d_e0, dg, db) = ln_backward(&cache.ln_extra, &params.norm_g, &dx);
        grads.norm_g += &dg;
        grads.norm_b += &db;
        d_e0
    };

    for (pos, &id) in ids.iter().enumerate() {
        let row = d_e0.row(pos);
        let mut emb = grads.token_emb.row_mut(id as usize);
        emb += &row;
        let mut p = grads.pos_emb.row_mut(pos);
        p += &row;
    }
}

/// Loss and exact parameter gradients for one masked sequence. The loss is
/// the mean cross-entropy over the masked positions; an empty mask set means
/// a constant loss of zero with all-zero gradients.
pub fn backward_mlm(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    ids: &[u32],
    pad_mask: &[bool],
    masked_positions: &[usize],
    targets: &[u32],
) -> Result<(f64, ParameterSet)> {
    if masked_positions.len() != targets.len() {
        return Err(Error::input("masked position and target counts differ"));
    }
    let mut grads = ParameterSet::zeros(cfg);
    if masked_positions.is_empty() {
        super::forward::validate_input(cfg, ids, pad_mask)?;
        return Ok((0.0, grads));
    }
    for (&pos, &tgt) in masked_positions.iter().zip(targets) {
        if pos >= ids.len() {
            return Err(Error::input(format!("masked position {pos} out of range")));
        }
        if tgt as usize >= cfg.vocab {
            return Err(Error::input(format!("target id {tgt} outside vocab")));
        }
    }

    let (trace, cache) = forward_cached(cfg, params, ids, pad_mask)?;
    let (loss, d_logits) = mlm_loss_grad(&trace, masked_positions, targets);
    if !loss.is_finite() {
        return Err(Error::numeric(format!("non-finite MLM loss {loss}")));
    }

    // Head: logits = final . W^T + bias, W the tied embedding or untied head.
    grads.head_bias += &d_logits.sum_axis(Axis(0));
    let proj = params.head.as_ref().unwrap_or(&params.token_emb);
    let d_final = d_logits.dot(proj);
    let d_w = d_logits.t().dot(&cache.final_hidden);
    match &mut grads.head {
        Some(h) => *h += &d_w,
        None => grads.token_emb += &d_w,
    }

    backward_stack(cfg, params, ids, &cache, &d_final, &mut grads);
    Ok((loss, grads))
}

/// Mean masked cross-entropy and its logit gradient.
fn mlm_loss_grad(
    trace: &ForwardTrace,
    masked_positions: &[usize],
    targets: &[u32],
) -> (f64, Array2<f64>) {
    let m = masked_positions.len() as f64;
    let mut d_logits = Array2::zeros(trace.logits.raw_dim());
    let mut loss = 0.0;
    for (&pos, &tgt) in masked_positions.iter().zip(targets) {
        let mut probs = trace
            .logits
            .row(pos)
            .insert_axis(Axis(0))
            .to_owned();
        softmax_rows(&mut probs);
        let p_target = probs[[0, tgt as usize]];
        loss -= (p_target.max(f64::MIN_POSITIVE)).ln();
        let mut d_row = d_logits.row_mut(pos);
        d_row += &probs.row(0);
        d_row.mapv_inplace(|x| x / m);
        d_row[tgt as usize] -= 1.0 / m;
    }
    (loss / m, d_logits)
}

/// Gradients for a loss expressed directly on the final hidden states, used
/// by the retrieval fine-tuner. `d_final` is d(loss)/d(hidden_states[layers]).
pub fn backward_from_hidden(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    ids: &[u32],
    pad_mask: &[bool],
    d_final: &Array2<f64>,
) -> Result<ParameterSet> {
    let (_, cache) = forward_cached(cfg, params, ids, pad_mask)?;
    if d_final.shape() != cache.final_hidden.shape() {
        return Err(Error::input(format!(
            "gradient shape {:?} does not match hidden shape {:?}",
            d_final.shape(),
            cache.final_hidden.shape()
        )));
    }
    let mut grads = ParameterSet::zeros(cfg);
    backward_stack(cfg, params, ids, &cache, d_final, &mut grads);
    Ok(grads)
}
