//! Exact gradients of the MLM loss with respect to every parameter tensor.
//!
//! Hand-derived reverse pass over the cached forward activations. The
//! values this produces are checked against central finite differences (at
//! f64) in the test suite and the acceptance suite.

use ndarray::{s, Array2};

use crate::error::Result;
use crate::model::forward::{forward_cached, loss_and_dlogits, Cache, ForwardMode, ModelBatch};
use crate::model::math::{c, col_sums, gelu_grad, layer_norm_backward, softmax_backward, Scalar};
use crate::model::params::{EncoderConfig, EncoderParams};

/// Loss and exact parameter gradients for one batch, dropout disabled.
pub fn backward<F: Scalar>(
    batch: &ModelBatch,
    params: &EncoderParams<F>,
    config: &EncoderConfig,
) -> Result<(f64, EncoderParams<F>)> {
    let (loss, _, grads) = loss_and_backward(batch, params, config, ForwardMode::Eval)?;
    Ok((loss, grads))
}

/// Forward + loss + full reverse pass under the given mode. Returns
/// `(loss, n_labeled, grads)`.
pub fn loss_and_backward<F: Scalar>(
    batch: &ModelBatch,
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    mode: ForwardMode,
) -> Result<(f64, usize, EncoderParams<F>)> {
    let (out, cache) = forward_cached(batch, params, config, mode)?;
    let (b, t, v) = out.logits.dim();
    let logits_flat = out
        .logits
        .into_shape_with_order((b * t, v))
        .expect("contiguous");
    let (loss, dlogits) = loss_and_dlogits(&logits_flat, &batch.labels);
    let grads = backward_from_dlogits(batch, params, config, &cache, dlogits);
    Ok((loss.value, loss.n_labeled, grads))
}

fn backward_from_dlogits<F: Scalar>(
    batch: &ModelBatch,
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    cache: &Cache<F>,
    dlogits: Array2<F>,
) -> EncoderParams<F> {
    let (b, t) = batch.dims();
    let heads = config.n_heads;
    let dh = config.head_dim();
    let scale = c::<F>(1.0 / (dh as f64).sqrt());
    let mut grads = EncoderParams::<F>::zeros(config);

    // --- MLM head ---
    // logits = head_normed . token_emb^T + out_bias
    grads.head.out_bias = col_sums(&dlogits);
    grads.token_emb = dlogits.t().dot(&cache.head_normed);
    let dhead_normed = dlogits.dot(&params.token_emb);

    let (dhead_act, dgain, dbias) =
        layer_norm_backward(&dhead_normed, &params.head.ln.gain, &cache.head_ln);
    grads.head.ln.gain = dgain;
    grads.head.ln.bias = dbias;

    let mut dhead_pre = dhead_act;
    dhead_pre.zip_mut_with(&cache.head_pre, |d, &x| *d = *d * gelu_grad(x));
    grads.head.dense.weight = cache.hidden.t().dot(&dhead_pre);
    grads.head.dense.bias = col_sums(&dhead_pre);
    let mut dx = dhead_pre.dot(&params.head.dense.weight.t());

    // --- transformer layers, reversed ---
    for (layer, lcache, lgrads) in zip_layers_rev(&params.layers, &cache.layers, &mut grads.layers)
    {
        // x_out = LN2(x_mid + ffn_drop(ffn_out))
        let (dr2, dgain, dbias) = layer_norm_backward(&dx, &layer.ln_ffn.gain, &lcache.ln2);
        lgrads.ln_ffn.gain = dgain;
        lgrads.ln_ffn.bias = dbias;

        let mut dffn_out = dr2.clone();
        if let Some(mask) = &lcache.ffn_drop {
            dffn_out = &dffn_out * mask;
        }
        lgrads.ffn_out.weight = lcache.ffn_act.t().dot(&dffn_out);
        lgrads.ffn_out.bias = col_sums(&dffn_out);
        let mut dffn_pre = dffn_out.dot(&layer.ffn_out.weight.t());
        dffn_pre.zip_mut_with(&lcache.ffn_pre, |d, &x| *d = *d * gelu_grad(x));
        lgrads.ffn_in.weight = lcache.x_mid.t().dot(&dffn_pre);
        lgrads.ffn_in.bias = col_sums(&dffn_pre);

        // residual: dr2 flows to x_mid directly, plus through the FFN input
        let dx_mid = &dr2 + &dffn_pre.dot(&layer.ffn_in.weight.t());

        // x_mid = LN1(x_in + attn_out_drop(attn_out))
        let (dr1, dgain, dbias) = layer_norm_backward(&dx_mid, &layer.ln_attn.gain, &lcache.ln1);
        lgrads.ln_attn.gain = dgain;
        lgrads.ln_attn.bias = dbias;

        let mut dattn_out = dr1.clone();
        if let Some(mask) = &lcache.attn_out_drop {
            dattn_out = &dattn_out * mask;
        }
        lgrads.attn.output.weight = lcache.ctx.t().dot(&dattn_out);
        lgrads.attn.output.bias = col_sums(&dattn_out);
        let dctx = dattn_out.dot(&layer.attn.output.weight.t());

        let n = b * t;
        let mut dq = Array2::<F>::zeros((n, config.hidden));
        let mut dk = Array2::<F>::zeros((n, config.hidden));
        let mut dv = Array2::<F>::zeros((n, config.hidden));
        for bi in 0..b {
            let rows = s![bi * t..(bi + 1) * t, ..];
            for hi in 0..heads {
                let cols = s![.., hi * dh..(hi + 1) * dh];
                let idx = bi * heads + hi;
                let attn = &lcache.attn[idx];
                let qh = lcache.q.slice(rows).slice_move(cols);
                let kh = lcache.k.slice(rows).slice_move(cols);
                let vh = lcache.v.slice(rows).slice_move(cols);
                let dctx_h = dctx.slice(rows).slice_move(cols);

                // ctx_h = a_used . v_h
                let (da_used, dvh) = match lcache.attn_drop.as_ref() {
                    Some(masks) => {
                        let a_used = attn * &masks[idx];
                        (dctx_h.dot(&vh.t()), a_used.t().dot(&dctx_h))
                    }
                    None => (dctx_h.dot(&vh.t()), attn.t().dot(&dctx_h)),
                };
                dv.slice_mut(rows).slice_mut(cols).assign(&dvh);

                let da = match lcache.attn_drop.as_ref() {
                    Some(masks) => &da_used * &masks[idx],
                    None => da_used,
                };
                let mut ds = softmax_backward(attn, &da);
                ds.mapv_inplace(|x| x * scale);
                dq.slice_mut(rows).slice_mut(cols).assign(&ds.dot(&kh));
                dk.slice_mut(rows)
                    .slice_mut(cols)
                    .assign(&ds.t().dot(&qh));
            }
        }
        lgrads.attn.query.weight = lcache.x_in.t().dot(&dq);
        lgrads.attn.query.bias = col_sums(&dq);
        lgrads.attn.key.weight = lcache.x_in.t().dot(&dk);
        lgrads.attn.key.bias = col_sums(&dk);
        lgrads.attn.value.weight = lcache.x_in.t().dot(&dv);
        lgrads.attn.value.bias = col_sums(&dv);

        dx = dr1;
        dx = &dx + &dq.dot(&layer.attn.query.weight.t());
        dx = &dx + &dk.dot(&layer.attn.key.weight.t());
        dx = &dx + &dv.dot(&layer.attn.value.weight.t());
    }

    // --- embeddings ---
    let d_ln0_out = match &cache.emb_drop {
        Some(mask) => &dx * mask,
        None => dx,
    };
    let (de, dgain, dbias) =
        layer_norm_backward(&d_ln0_out, &params.emb_ln.gain, &cache.emb_ln);
    grads.emb_ln.gain = dgain;
    grads.emb_ln.bias = dbias;
    for (row_idx, de_row) in de.rows().into_iter().enumerate() {
        let id = batch.ids[[row_idx / t, row_idx % t]] as usize;
        let mut tok_row = grads.token_emb.row_mut(id);
        tok_row.zip_mut_with(&de_row, |g, &d| *g = *g + d);
        let mut pos_row = grads.pos_emb.row_mut(row_idx % t);
        pos_row.zip_mut_with(&de_row, |g, &d| *g = *g + d);
    }

    grads
}

/// Reverse zip over layers and their caches/grads.
fn zip_layers_rev<'a, F>(
    layers: &'a [crate::model::params::LayerParams<F>],
    caches: &'a [crate::model::forward::LayerCache<F>],
    grads: &'a mut [crate::model::params::LayerParams<F>],
) -> impl Iterator<
    Item = (
        &'a crate::model::params::LayerParams<F>,
        &'a crate::model::forward::LayerCache<F>,
        &'a mut crate::model::params::LayerParams<F>,
    ),
> {
    layers
        .iter()
        .rev()
        .zip(caches.iter().rev())
        .zip(grads.iter_mut().rev())
        .map(|((l, c), g)| (l, c, g))
}
