//! Encoder configuration, parameter tensors, and the tensor manifest.
//!
//! The manifest is the single source of truth for tensor order: parameter
//! serialization, optimizer state, initialization, and the gradient check
//! all walk tensors in manifest order. Names are stable and appear in
//! checkpoints and diagnostics.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::math::{c, Scalar};
use crate::rng::{stream_rng, STREAM_INIT};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    /// Train-time dropout probability; inference always runs without it.
    pub dropout: f64,
}

impl EncoderConfig {
    /// BERT-base scale: 12 layers, hidden 768, 12 heads, FFN 3072, 512
    /// positions.
    pub fn paper(vocab_size: usize) -> Self {
        EncoderConfig {
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            ffn_dim: 3072,
            max_positions: 512,
            vocab_size,
            dropout: 0.1,
        }
    }

    /// Desk scale: 4 layers, hidden 128, 4 heads, FFN 512, 128 positions.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            n_layers: 4,
            hidden: 128,
            n_heads: 4,
            ffn_dim: 512,
            max_positions: 128,
            vocab_size,
            dropout: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be >= 1".into());
        }
        if self.hidden == 0 || self.n_heads == 0 || self.ffn_dim == 0 {
            return fail("hidden, n_heads and ffn_dim must be >= 1".into());
        }
        if self.hidden % self.n_heads != 0 {
            return fail(format!(
                "hidden {} not divisible by n_heads {}",
                self.hidden, self.n_heads
            ));
        }
        if self.max_positions == 0 {
            return fail("max_positions must be >= 1".into());
        }
        if self.vocab_size < crate::vocab::SPECIALS.len() {
            return fail(format!(
                "vocab_size {} smaller than the special token set",
                self.vocab_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    /// Weight matrix or embedding: normal(0, 0.02) init, weight decay.
    Weight,
    /// Bias vector: zero init, no decay.
    Bias,
    /// Layer-norm gain: ones init, no decay.
    Gain,
}

/// One entry of the tensor manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the serialized f32 parameter blob.
    pub offset: u64,
    #[serde(skip, default = "default_kind")]
    pub kind: TensorKind,
}

fn default_kind() -> TensorKind {
    TensorKind::Weight
}

impl TensorMeta {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn decay(&self) -> bool {
        self.kind == TensorKind::Weight
    }
}

/// The named, ordered tensor manifest for a configuration.
pub fn manifest(config: &EncoderConfig) -> Vec<TensorMeta> {
    let h = config.hidden;
    let mut metas: Vec<TensorMeta> = Vec::new();
    let mut offset = 0u64;
    let mut push = |name: String, shape: Vec<usize>, kind: TensorKind| {
        let numel: usize = shape.iter().product();
        metas.push(TensorMeta {
            name,
            shape,
            offset,
            kind,
        });
        offset += (numel * std::mem::size_of::<f32>()) as u64;
    };

    push(
        "token_embedding".into(),
        vec![config.vocab_size, h],
        TensorKind::Weight,
    );
    push(
        "position_embedding".into(),
        vec![config.max_positions, h],
        TensorKind::Weight,
    );
    push("embedding_layer_norm.gain".into(), vec![h], TensorKind::Gain);
    push("embedding_layer_norm.bias".into(), vec![h], TensorKind::Bias);
    for l in 0..config.n_layers {
        for proj in ["query", "key", "value", "output"] {
            push(
                format!("layers.{l}.attention.{proj}.weight"),
                vec![h, h],
                TensorKind::Weight,
            );
            push(
                format!("layers.{l}.attention.{proj}.bias"),
                vec![h],
                TensorKind::Bias,
            );
        }
        push(
            format!("layers.{l}.attention_layer_norm.gain"),
            vec![h],
            TensorKind::Gain,
        );
        push(
            format!("layers.{l}.attention_layer_norm.bias"),
            vec![h],
            TensorKind::Bias,
        );
        push(
            format!("layers.{l}.ffn.intermediate.weight"),
            vec![h, config.ffn_dim],
            TensorKind::Weight,
        );
        push(
            format!("layers.{l}.ffn.intermediate.bias"),
            vec![config.ffn_dim],
            TensorKind::Bias,
        );
        push(
            format!("layers.{l}.ffn.output.weight"),
            vec![config.ffn_dim, h],
            TensorKind::Weight,
        );
        push(format!("layers.{l}.ffn.output.bias"), vec![h], TensorKind::Bias);
        push(
            format!("layers.{l}.ffn_layer_norm.gain"),
            vec![h],
            TensorKind::Gain,
        );
        push(
            format!("layers.{l}.ffn_layer_norm.bias"),
            vec![h],
            TensorKind::Bias,
        );
    }
    push("head.dense.weight".into(), vec![h, h], TensorKind::Weight);
    push("head.dense.bias".into(), vec![h], TensorKind::Bias);
    push("head.layer_norm.gain".into(), vec![h], TensorKind::Gain);
    push("head.layer_norm.bias".into(), vec![h], TensorKind::Bias);
    // output projection is tied to token_embedding; only its bias is a tensor
    push("head.output_bias".into(), vec![config.vocab_size], TensorKind::Bias);
    metas
}

/// Total parameter count, straight off the manifest.
pub fn param_count(config: &EncoderConfig) -> usize {
    manifest(config).iter().map(TensorMeta::numel).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<F> {
    pub gain: Array1<F>,
    pub bias: Array1<F>,
}

/// A dense projection with weight laid out `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<F> {
    pub query: LinearParams<F>,
    pub key: LinearParams<F>,
    pub value: LinearParams<F>,
    pub output: LinearParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub attn: AttentionParams<F>,
    pub ln_attn: LayerNormParams<F>,
    pub ffn_in: LinearParams<F>,
    pub ffn_out: LinearParams<F>,
    pub ln_ffn: LayerNormParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<F> {
    pub dense: LinearParams<F>,
    pub ln: LayerNormParams<F>,
    pub out_bias: Array1<F>,
}

/// All tensors of the encoder plus MLM head. The output projection is tied
/// to `token_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    pub token_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub emb_ln: LayerNormParams<F>,
    pub layers: Vec<LayerParams<F>>,
    pub head: HeadParams<F>,
}

impl<F: Scalar> EncoderParams<F> {
    /// All-zero tensors (gradient/moment accumulators).
    pub fn zeros(config: &EncoderConfig) -> Self {
        let h = config.hidden;
        let linear = |i: usize, o: usize| LinearParams {
            weight: Array2::zeros((i, o)),
            bias: Array1::zeros(o),
        };
        let ln = || LayerNormParams {
            gain: Array1::zeros(h),
            bias: Array1::zeros(h),
        };
        EncoderParams {
            token_emb: Array2::zeros((config.vocab_size, h)),
            pos_emb: Array2::zeros((config.max_positions, h)),
            emb_ln: ln(),
            layers: (0..config.n_layers)
                .map(|_| LayerParams {
                    attn: AttentionParams {
                        query: linear(h, h),
                        key: linear(h, h),
                        value: linear(h, h),
                        output: linear(h, h),
                    },
                    ln_attn: ln(),
                    ffn_in: linear(h, config.ffn_dim),
                    ffn_out: linear(config.ffn_dim, h),
                    ln_ffn: ln(),
                })
                .collect(),
            head: HeadParams {
                dense: linear(h, h),
                ln: ln(),
                out_bias: Array1::zeros(config.vocab_size),
            },
        }
    }

    /// Deterministic initialization: weights truncated normal(0, 0.02)
    /// clipped at two standard deviations, biases zero, layer-norm gain one.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let metas = manifest(config);
        let mut rng = stream_rng(seed, STREAM_INIT, 0, 0);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        for (meta, slice) in metas.iter().zip(params.slices_mut()) {
            match meta.kind {
                TensorKind::Weight => {
                    for v in slice {
                        let mut x = normal.sample(&mut rng);
                        while x.abs() > 2.0 * INIT_STD {
                            x = normal.sample(&mut rng);
                        }
                        *v = c::<F>(x);
                    }
                }
                TensorKind::Bias => {}
                TensorKind::Gain => slice.fill(F::one()),
            }
        }
        Ok(params)
    }

    /// Flat slices over every tensor, in manifest order.
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        let std = "tensor storage is standard layout";
        out.push(self.token_emb.as_slice().expect(std));
        out.push(self.pos_emb.as_slice().expect(std));
        out.push(self.emb_ln.gain.as_slice().expect(std));
        out.push(self.emb_ln.bias.as_slice().expect(std));
        for layer in &self.layers {
            for lin in [
                &layer.attn.query,
                &layer.attn.key,
                &layer.attn.value,
                &layer.attn.output,
            ] {
                out.push(lin.weight.as_slice().expect(std));
                out.push(lin.bias.as_slice().expect(std));
            }
            out.push(layer.ln_attn.gain.as_slice().expect(std));
            out.push(layer.ln_attn.bias.as_slice().expect(std));
            out.push(layer.ffn_in.weight.as_slice().expect(std));
            out.push(layer.ffn_in.bias.as_slice().expect(std));
            out.push(layer.ffn_out.weight.as_slice().expect(std));
            out.push(layer.ffn_out.bias.as_slice().expect(std));
            out.push(layer.ln_ffn.gain.as_slice().expect(std));
            out.push(layer.ln_ffn.bias.as_slice().expect(std));
        }
        out.push(self.head.dense.weight.as_slice().expect(std));
        out.push(self.head.dense.bias.as_slice().expect(std));
        out.push(self.head.ln.gain.as_slice().expect(std));
        out.push(self.head.ln.bias.as_slice().expect(std));
        out.push(self.head.out_bias.as_slice().expect(std));
        out
    }

    /// Mutable flat slices, in manifest order.
    pub fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        let std = "tensor storage is standard layout";
        out.push(self.token_emb.as_slice_mut().expect(std));
        out.push(self.pos_emb.as_slice_mut().expect(std));
        out.push(self.emb_ln.gain.as_slice_mut().expect(std));
        out.push(self.emb_ln.bias.as_slice_mut().expect(std));
        for layer in &mut self.layers {
            for lin in [
                &mut layer.attn.query,
                &mut layer.attn.key,
                &mut layer.attn.value,
                &mut layer.attn.output,
            ] {
                out.push(lin.weight.as_slice_mut().expect(std));
                out.push(lin.bias.as_slice_mut().expect(std));
            }
            out.push(layer.ln_attn.gain.as_slice_mut().expect(std));
            out.push(layer.ln_attn.bias.as_slice_mut().expect(std));
            out.push(layer.ffn_in.weight.as_slice_mut().expect(std));
            out.push(layer.ffn_in.bias.as_slice_mut().expect(std));
            out.push(layer.ffn_out.weight.as_slice_mut().expect(std));
            out.push(layer.ffn_out.bias.as_slice_mut().expect(std));
            out.push(layer.ln_ffn.gain.as_slice_mut().expect(std));
            out.push(layer.ln_ffn.bias.as_slice_mut().expect(std));
        }
        out.push(self.head.dense.weight.as_slice_mut().expect(std));
        out.push(self.head.dense.bias.as_slice_mut().expect(std));
        out.push(self.head.ln.gain.as_slice_mut().expect(std));
        out.push(self.head.ln.bias.as_slice_mut().expect(std));
        out.push(self.head.out_bias.as_slice_mut().expect(std));
        out
    }

    /// Cast every tensor elementwise.
    pub fn cast<G: Scalar>(&self) -> EncoderParams<G> {
        let conv1 = |a: &Array1<F>| a.mapv(|v| c::<G>(v.to_f64()));
        let conv2 = |a: &Array2<F>| a.mapv(|v| c::<G>(v.to_f64()));
        let lin = |l: &LinearParams<F>| LinearParams {
            weight: conv2(&l.weight),
            bias: conv1(&l.bias),
        };
        let ln = |l: &LayerNormParams<F>| LayerNormParams {
            gain: conv1(&l.gain),
            bias: conv1(&l.bias),
        };
        EncoderParams {
            token_emb: conv2(&self.token_emb),
            pos_emb: conv2(&self.pos_emb),
            emb_ln: ln(&self.emb_ln),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn: AttentionParams {
                        query: lin(&l.attn.query),
                        key: lin(&l.attn.key),
                        value: lin(&l.attn.value),
                        output: lin(&l.attn.output),
                    },
                    ln_attn: ln(&l.ln_attn),
                    ffn_in: lin(&l.ffn_in),
                    ffn_out: lin(&l.ffn_out),
                    ln_ffn: ln(&l.ln_ffn),
                })
                .collect(),
            head: HeadParams {
                dense: lin(&self.head.dense),
                ln: ln(&self.head.ln),
                out_bias: conv1(&self.head.out_bias),
            },
        }
    }
}
