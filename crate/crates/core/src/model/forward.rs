//! Encoder forward pass and the MLM loss.
//!
//! Post-layer-norm transformer: each sublayer computes
//! `x = LayerNorm(x + Sublayer(x))`. Attention uses additive masking at
//! padded key positions; the MLM head is dense -> GELU -> layer norm ->
//! projection tied to the token embedding.

use ndarray::{s, Array2, Array3};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Batch, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::model::math::{
    c, dropout_mask, gelu, layer_norm_forward, softmax_rows, LnCache, Scalar,
};
use crate::model::params::{EncoderConfig, EncoderParams, LinearParams};

/// Additive attention-mask value for padded keys. exp(-1e9) underflows to
/// zero in both f32 and f64, so masked keys get exactly zero weight.
const MASK_NEG: f64 = -1e9;

/// A batch in tensor form: ids, attention mask (1 = real token), labels
/// (IGNORE_LABEL outside the loss).
#[derive(Debug, Clone)]
pub struct ModelBatch {
    pub ids: Array2<u32>,
    pub mask: Array2<u8>,
    pub labels: Array2<i64>,
}

impl ModelBatch {
    pub fn from_batch(batch: &Batch) -> Self {
        let b = batch.rows();
        let t = batch.cols();
        let flat_ids: Vec<u32> = batch.input_ids.iter().flatten().copied().collect();
        let flat_labels: Vec<i64> = batch.labels.iter().flatten().copied().collect();
        let flat_mask: Vec<u8> = batch.attention_mask.iter().flatten().copied().collect();
        ModelBatch {
            ids: Array2::from_shape_vec((b, t), flat_ids).expect("rectangular batch"),
            mask: Array2::from_shape_vec((b, t), flat_mask).expect("rectangular batch"),
            labels: Array2::from_shape_vec((b, t), flat_labels).expect("rectangular batch"),
        }
    }

    /// An inference batch: full attention, no labels.
    pub fn from_ids(rows: Vec<Vec<u32>>) -> Self {
        let b = rows.len();
        let t = rows.first().map_or(0, |r| r.len());
        let flat: Vec<u32> = rows.into_iter().flatten().collect();
        ModelBatch {
            ids: Array2::from_shape_vec((b, t), flat).expect("rectangular rows"),
            mask: Array2::from_elem((b, t), 1),
            labels: Array2::from_elem((b, t), IGNORE_LABEL),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.ids.dim()
    }
}

/// Whether dropout is live. Training needs an RNG for the dropout streams.
pub enum ForwardMode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    /// `[batch, seq, vocab]`
    pub logits: Array3<F>,
    /// Last-layer hidden states, `[batch, seq, hidden]`
    pub hidden: Array3<F>,
}

pub(crate) struct LayerCache<F> {
    pub x_in: Array2<F>,
    pub q: Array2<F>,
    pub k: Array2<F>,
    pub v: Array2<F>,
    /// Softmax attention per (batch row, head), each `[seq, seq]`.
    pub attn: Vec<Array2<F>>,
    pub attn_drop: Option<Vec<Array2<F>>>,
    pub ctx: Array2<F>,
    pub attn_out_drop: Option<Array2<F>>,
    pub ln1: LnCache<F>,
    pub x_mid: Array2<F>,
    pub ffn_pre: Array2<F>,
    pub ffn_act: Array2<F>,
    pub ffn_drop: Option<Array2<F>>,
    pub ln2: LnCache<F>,
}

pub(crate) struct Cache<F> {
    pub emb_ln: LnCache<F>,
    pub emb_drop: Option<Array2<F>>,
    pub layers: Vec<LayerCache<F>>,
    /// Final hidden states, `[B*T, hidden]`; input to the head dense.
    pub hidden: Array2<F>,
    pub head_pre: Array2<F>,
    pub head_ln: LnCache<F>,
    /// Head output after layer norm; input to the tied projection.
    pub head_normed: Array2<F>,
}

fn linear<F: Scalar>(x: &Array2<F>, p: &LinearParams<F>) -> Array2<F> {
    let mut y = x.dot(&p.weight);
    for mut row in y.rows_mut() {
        row.zip_mut_with(&p.bias, |v, &b| *v = *v + b);
    }
    y
}

/// Forward pass. Returns logits `[B,T,V]` and last-layer hidden states
/// `[B,T,H]`.
pub fn forward<F: Scalar>(
    batch: &ModelBatch,
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    mode: ForwardMode,
) -> Result<ForwardOutput<F>> {
    let (out, _) = forward_cached(batch, params, config, mode)?;
    Ok(out)
}

pub(crate) fn forward_cached<F: Scalar>(
    batch: &ModelBatch,
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    mode: ForwardMode,
) -> Result<(ForwardOutput<F>, Cache<F>)> {
    let (b, t) = batch.dims();
    if b == 0 || t == 0 {
        return Err(Error::Shape("forward: empty batch".into()));
    }
    if t > config.max_positions {
        return Err(Error::Shape(format!(
            "forward: sequence length {t} exceeds max_positions {}",
            config.max_positions
        )));
    }
    if batch.mask.dim() != (b, t) || batch.labels.dim() != (b, t) {
        return Err(Error::Shape("forward: ids/mask/labels dimensions differ".into()));
    }
    if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::Shape(format!(
            "forward: token id {id} out of range for vocab_size {}",
            config.vocab_size
        )));
    }

    let n = b * t;
    let h = config.hidden;
    let heads = config.n_heads;
    let dh = config.head_dim();
    let scale = c::<F>(1.0 / (dh as f64).sqrt());
    let neg = c::<F>(MASK_NEG);

    let mut dropout_rng = match mode {
        ForwardMode::Eval => None,
        ForwardMode::Train { rng } => (config.dropout > 0.0).then_some(rng),
    };
    let p_drop = config.dropout;

    // token + position embeddings
    let mut x = Array2::<F>::zeros((n, h));
    for (row_idx, mut row) in x.rows_mut().into_iter().enumerate() {
        let id = batch.ids[[row_idx / t, row_idx % t]] as usize;
        let tok = params.token_emb.row(id);
        let pos = params.pos_emb.row(row_idx % t);
        for j in 0..h {
            row[j] = tok[j] + pos[j];
        }
    }
    let (mut x, emb_ln) = layer_norm_forward(&x, &params.emb_ln.gain, &params.emb_ln.bias);
    let emb_drop = dropout_rng.as_deref_mut().map(|rng| {
        let m = dropout_mask((n, h), p_drop, rng);
        x = &x * &m;
        m
    });

    let mut layer_caches = Vec::with_capacity(config.n_layers);
    for layer in &params.layers {
        let x_in = x;
        let q = linear(&x_in, &layer.attn.query);
        let k = linear(&x_in, &layer.attn.key);
        let v = linear(&x_in, &layer.attn.value);

        let mut ctx = Array2::<F>::zeros((n, h));
        let mut attn = Vec::with_capacity(b * heads);
        let mut attn_drop = dropout_rng.is_some().then(Vec::new);
        for bi in 0..b {
            let rows = s![bi * t..(bi + 1) * t, ..];
            for hi in 0..heads {
                let cols = s![.., hi * dh..(hi + 1) * dh];
                let qh = q.slice(rows).slice_move(cols);
                let kh = k.slice(rows).slice_move(cols);
                let vh = v.slice(rows).slice_move(cols);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|s| s * scale);
                for j in 0..t {
                    if batch.mask[[bi, j]] == 0 {
                        scores.column_mut(j).mapv_inplace(|s| s + neg);
                    }
                }
                softmax_rows(&mut scores);
                let a_used = if let Some(rng) = dropout_rng.as_deref_mut() {
                    let m: Array2<F> = dropout_mask((t, t), p_drop, rng);
                    let used = &scores * &m;
                    attn_drop.as_mut().expect("train mode").push(m);
                    used
                } else {
                    scores.clone()
                };
                ctx.slice_mut(rows)
                    .slice_mut(cols)
                    .assign(&a_used.dot(&vh));
                attn.push(scores);
            }
        }

        let mut attn_out = linear(&ctx, &layer.attn.output);
        let attn_out_drop = dropout_rng.as_deref_mut().map(|rng| {
            let m = dropout_mask((n, h), p_drop, rng);
            attn_out = &attn_out * &m;
            m
        });
        let r1 = &x_in + &attn_out;
        let (x_mid, ln1) = layer_norm_forward(&r1, &layer.ln_attn.gain, &layer.ln_attn.bias);

        let ffn_pre = linear(&x_mid, &layer.ffn_in);
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn_out = linear(&ffn_act, &layer.ffn_out);
        let ffn_drop = dropout_rng.as_deref_mut().map(|rng| {
            let m = dropout_mask((n, h), p_drop, rng);
            ffn_out = &ffn_out * &m;
            m
        });
        let r2 = &x_mid + &ffn_out;
        let (x_out, ln2) = layer_norm_forward(&r2, &layer.ln_ffn.gain, &layer.ln_ffn.bias);

        layer_caches.push(LayerCache {
            x_in,
            q,
            k,
            v,
            attn,
            attn_drop,
            ctx,
            attn_out_drop,
            ln1,
            x_mid,
            ffn_pre,
            ffn_act,
            ffn_drop,
            ln2,
        });
        x = x_out;
    }

    let hidden = x;
    let head_pre = linear(&hidden, &params.head.dense);
    let head_act = head_pre.mapv(gelu);
    let (head_normed, head_ln) =
        layer_norm_forward(&head_act, &params.head.ln.gain, &params.head.ln.bias);
    let mut logits = head_normed.dot(&params.token_emb.t());
    for mut row in logits.rows_mut() {
        row.zip_mut_with(&params.head.out_bias, |v, &bias| *v = *v + bias);
    }

    let out = ForwardOutput {
        logits: logits
            .into_shape_with_order((b, t, config.vocab_size))
            .expect("contiguous"),
        hidden: hidden
            .clone()
            .into_shape_with_order((b, t, h))
            .expect("contiguous"),
    };
    let cache = Cache {
        emb_ln,
        emb_drop,
        layers: layer_caches,
        hidden,
        head_pre,
        head_ln,
        head_normed,
    };
    Ok((out, cache))
}

/// MLM loss summary. `value` is the mean cross-entropy over labeled
/// positions, accumulated in f64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub n_labeled: usize,
}

impl LossValue {
    /// True when no position carried a label (loss defined as 0).
    pub fn is_degenerate(&self) -> bool {
        self.n_labeled == 0
    }
}

/// Mean cross-entropy over positions with `label != IGNORE_LABEL`.
pub fn mlm_loss<F: Scalar>(logits: &Array3<F>, labels: &Array2<i64>) -> Result<LossValue> {
    let (b, t, v) = logits.dim();
    if labels.dim() != (b, t) {
        return Err(Error::Shape(format!(
            "mlm_loss: logits {:?} vs labels {:?}",
            (b, t, v),
            labels.dim()
        )));
    }
    let flat = logits.to_shape((b * t, v)).expect("contiguous");
    let mut total = 0.0f64;
    let mut n_labeled = 0usize;
    for (idx, label) in labels.iter().enumerate() {
        if *label == IGNORE_LABEL {
            continue;
        }
        if *label < 0 || *label >= v as i64 {
            return Err(Error::Shape(format!("mlm_loss: label {label} out of range")));
        }
        let row = flat.row(idx);
        total += logsumexp(&row) - row[*label as usize].to_f64();
        n_labeled += 1;
    }
    if n_labeled == 0 {
        log::warn!("mlm_loss: no labeled positions; loss defined as 0");
        return Ok(LossValue {
            value: 0.0,
            n_labeled: 0,
        });
    }
    Ok(LossValue {
        value: total / n_labeled as f64,
        n_labeled,
    })
}

fn logsumexp<F: Scalar>(row: &ndarray::ArrayView1<F>) -> f64 {
    let max = row.iter().cloned().fold(F::neg_infinity(), F::max).to_f64();
    let sum: f64 = row.iter().map(|&x| (x.to_f64() - max).exp()).sum();
    max + sum.ln()
}

/// Loss plus its gradient w.r.t. the flat `[B*T, V]` logits.
pub(crate) fn loss_and_dlogits<F: Scalar>(
    logits_flat: &Array2<F>,
    labels: &Array2<i64>,
) -> (LossValue, Array2<F>) {
    let (n, v) = logits_flat.dim();
    let mut dlogits = Array2::<F>::zeros((n, v));
    let mut total = 0.0f64;
    let mut n_labeled = 0usize;
    for (idx, label) in labels.iter().enumerate() {
        if *label == IGNORE_LABEL {
            continue;
        }
        n_labeled += 1;
        let row = logits_flat.row(idx);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        let mut drow = dlogits.row_mut(idx);
        for (d, &x) in drow.iter_mut().zip(row.iter()) {
            let e = (x - max).exp();
            sum = sum + e;
            *d = e;
        }
        let inv = F::one() / sum;
        drow.mapv_inplace(|d| d * inv);
        total += (sum.to_f64().ln() + max.to_f64()) - row[*label as usize].to_f64();
        drow[*label as usize] = drow[*label as usize] - F::one();
    }
    if n_labeled > 0 {
        let inv_n = c::<F>(1.0 / n_labeled as f64);
        dlogits.mapv_inplace(|d| d * inv_n);
        total /= n_labeled as f64;
    } else {
        dlogits.fill(F::zero());
    }
    (
        LossValue {
            value: total,
            n_labeled,
        },
        dlogits,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_config(vocab: usize) -> EncoderConfig {
        EncoderConfig {
            n_layers: 2,
            hidden: 16,
            n_heads: 4,
            ffn_dim: 24,
            max_positions: 12,
            vocab_size: vocab,
            dropout: 0.0,
        }
    }

    fn batch_of(rows: Vec<Vec<u32>>) -> ModelBatch {
        ModelBatch::from_ids(rows)
    }

    #[test]
    fn forward_shapes() {
        let config = tiny_config(11);
        let params = EncoderParams::<f32>::init(&config, 1).unwrap();
        let batch = batch_of(vec![vec![0, 5, 6, 7, 2]; 2]);
        let out = forward(&batch, &params, &config, ForwardMode::Eval).unwrap();
        assert_eq!(out.logits.dim(), (2, 5, 11));
        assert_eq!(out.hidden.dim(), (2, 5, 16));
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let config = tiny_config(11);
        let params = EncoderParams::<f32>::init(&config, 1).unwrap();
        // id out of range
        let batch = batch_of(vec![vec![0, 99, 2]]);
        assert!(forward(&batch, &params, &config, ForwardMode::Eval).is_err());
        // too long
        let batch = batch_of(vec![(0..13).map(|_| 5u32).collect()]);
        assert!(forward(&batch, &params, &config, ForwardMode::Eval).is_err());
    }

    #[test]
    fn pad_columns_leave_real_positions_unchanged() {
        let config = tiny_config(11);
        let params = EncoderParams::<f32>::init(&config, 3).unwrap();
        let plain = batch_of(vec![vec![0, 5, 6, 2]]);
        let mut padded = batch_of(vec![vec![0, 5, 6, 2, 1, 1, 1]]);
        for j in 4..7 {
            padded.mask[[0, j]] = 0;
        }
        let a = forward(&plain, &params, &config, ForwardMode::Eval).unwrap();
        let b = forward(&padded, &params, &config, ForwardMode::Eval).unwrap();
        for t in 0..4 {
            for j in 0..16 {
                let (x, y) = (a.hidden[[0, t, j]], b.hidden[[0, t, j]]);
                assert!(
                    (x - y).abs() < 1e-5,
                    "hidden[{t},{j}] differs: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn zeroed_positions_make_model_permutation_equivariant() {
        let config = tiny_config(11);
        let mut params = EncoderParams::<f32>::init(&config, 5).unwrap();
        params.pos_emb.fill(0.0);
        let a = forward(
            &batch_of(vec![vec![5, 6, 7, 8]]),
            &params,
            &config,
            ForwardMode::Eval,
        )
        .unwrap();
        let b = forward(
            &batch_of(vec![vec![7, 5, 8, 6]]),
            &params,
            &config,
            ForwardMode::Eval,
        )
        .unwrap();
        // permutation of tokens permutes hidden states identically
        let perm = [1usize, 3, 0, 2]; // position of a's token i in b
        for (i, &pi) in perm.iter().enumerate() {
            for j in 0..16 {
                assert_relative_eq!(
                    a.hidden[[0, i, j]],
                    b.hidden[[0, pi, j]],
                    epsilon = 1e-5
                );
            }
        }
    }

    #[test]
    fn deterministic_eval() {
        let config = tiny_config(11);
        let params = EncoderParams::<f32>::init(&config, 1).unwrap();
        let batch = batch_of(vec![vec![0, 5, 6, 2]]);
        let a = forward(&batch, &params, &config, ForwardMode::Eval).unwrap();
        let b = forward(&batch, &params, &config, ForwardMode::Eval).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn train_mode_dropout_changes_outputs_eval_does_not() {
        use crate::rng::{stream_rng, STREAM_DROPOUT};
        let mut config = tiny_config(11);
        config.dropout = 0.3;
        let params = EncoderParams::<f32>::init(&config, 1).unwrap();
        let batch = batch_of(vec![vec![0, 5, 6, 7, 8, 2]]);
        let mut r1 = stream_rng(1, STREAM_DROPOUT, 0, 0);
        let mut r2 = stream_rng(1, STREAM_DROPOUT, 1, 0);
        let a = forward(&batch, &params, &config, ForwardMode::Train { rng: &mut r1 }).unwrap();
        let b = forward(&batch, &params, &config, ForwardMode::Train { rng: &mut r2 }).unwrap();
        assert_ne!(a.logits, b.logits);
        let c1 = forward(&batch, &params, &config, ForwardMode::Eval).unwrap();
        let c2 = forward(&batch, &params, &config, ForwardMode::Eval).unwrap();
        assert_eq!(c1.logits, c2.logits);
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        let logits = Array3::<f64>::zeros((1, 3, 8));
        let labels =
            Array2::from_shape_vec((1, 3), vec![IGNORE_LABEL, 4, 7]).unwrap();
        let loss = mlm_loss(&logits, &labels).unwrap();
        assert_eq!(loss.n_labeled, 2);
        assert_relative_eq!(loss.value, (8.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn confident_correct_logits_loss_near_zero() {
        let mut logits = Array3::<f64>::zeros((1, 2, 5));
        logits[[0, 0, 3]] = 50.0;
        logits[[0, 1, 1]] = 50.0;
        let labels = Array2::from_shape_vec((1, 2), vec![3, 1]).unwrap();
        let loss = mlm_loss(&logits, &labels).unwrap();
        assert!(loss.value < 1e-12);
    }

    #[test]
    fn hand_computed_two_position_case() {
        // position A: logits [1, 2], label 0 -> loss = ln(1+e) - 1... computed directly
        let mut logits = Array3::<f64>::zeros((1, 2, 2));
        logits[[0, 0, 0]] = 1.0;
        logits[[0, 0, 1]] = 2.0;
        logits[[0, 1, 0]] = -0.5;
        logits[[0, 1, 1]] = 0.25;
        let labels = Array2::from_shape_vec((1, 2), vec![0, 1]).unwrap();
        let l0 = (1.0f64.exp() + 2.0f64.exp()).ln() - 1.0;
        let l1 = ((-0.5f64).exp() + 0.25f64.exp()).ln() - 0.25;
        let expected = (l0 + l1) / 2.0;
        let loss = mlm_loss(&logits, &labels).unwrap();
        assert_relative_eq!(loss.value, expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_labeled_positions_is_zero_with_flag() {
        let logits = Array3::<f64>::zeros((1, 2, 4));
        let labels = Array2::from_elem((1, 2), IGNORE_LABEL);
        let loss = mlm_loss(&logits, &labels).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.is_degenerate());
    }

    #[test]
    fn fresh_model_loss_near_ln_vocab() {
        let config = tiny_config(32);
        let params = EncoderParams::<f32>::init(&config, 11).unwrap();
        let mut batch = batch_of(vec![
            (0..10).map(|i| 5 + (i * 7 % 27) as u32).collect(),
            (0..10).map(|i| 5 + (i * 5 % 27) as u32).collect(),
        ]);
        for i in 0..2 {
            for t in 0..10 {
                batch.labels[[i, t]] = batch.ids[[i, t]] as i64;
            }
        }
        let out = forward(&batch, &params, &config, ForwardMode::Eval).unwrap();
        let loss = mlm_loss(&out.logits, &batch.labels).unwrap();
        let ln_v = (32.0f64).ln();
        assert!(
            (loss.value - ln_v).abs() / ln_v < 0.05,
            "fresh loss {} vs ln(V) {}",
            loss.value,
            ln_v
        );
    }

    #[test]
    fn attention_rows_sum_to_one_over_real_keys() {
        let config = tiny_config(11);
        let params = EncoderParams::<f64>::init(&config, 2).unwrap();
        let mut batch = batch_of(vec![vec![0, 5, 6, 2, 1, 1]]);
        batch.mask[[0, 4]] = 0;
        batch.mask[[0, 5]] = 0;
        let (_, cache) = forward_cached(&batch, &params, &config, ForwardMode::Eval).unwrap();
        for layer in &cache.layers {
            for a in &layer.attn {
                for row in a.rows() {
                    let real: f64 = row.iter().take(4).sum();
                    let padded: f64 = row.iter().skip(4).sum();
                    assert_relative_eq!(real, 1.0, epsilon = 1e-6);
                    assert_eq!(padded, 0.0);
                }
            }
        }
    }
}
