//! Adam optimizer with decoupled weight decay and the linear
//! warmup/decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::math::{c, Scalar};
use crate::model::params::{manifest, EncoderConfig, EncoderParams, TensorMeta};

/// Linear 0 -> peak over `warmup_steps`, then linear peak -> 0 at
/// `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, warmup_steps: u64, peak: f64) -> f64 {
    debug_assert!(warmup_steps <= total_steps);
    let step = step.min(total_steps);
    if step <= warmup_steps {
        if warmup_steps == 0 {
            return peak;
        }
        peak * step as f64 / warmup_steps as f64
    } else {
        let decay_span = (total_steps - warmup_steps).max(1);
        peak * (total_steps - step) as f64 / decay_span as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to weight tensors only (never to
    /// biases or layer-norm parameters).
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// Step counter plus first/second moment accumulators, shaped like the
/// parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    pub step: u64,
    pub m: EncoderParams<F>,
    pub v: EncoderParams<F>,
    pub hyper: AdamHyper,
    metas: Vec<TensorMeta>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(config: &EncoderConfig, hyper: AdamHyper) -> Self {
        OptimizerState {
            step: 0,
            m: EncoderParams::zeros(config),
            v: EncoderParams::zeros(config),
            hyper,
            metas: manifest(config),
        }
    }

    pub fn metas(&self) -> &[TensorMeta] {
        &self.metas
    }
}

/// One bias-corrected Adam update:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
///
/// Rejects non-finite gradients, naming the offending tensor.
pub fn adam_step<F: Scalar>(
    params: &mut EncoderParams<F>,
    grads: &EncoderParams<F>,
    state: &mut OptimizerState<F>,
    lr: f64,
) -> Result<()> {
    let gslices = grads.slices();
    for (meta, slice) in state.metas.iter().zip(&gslices) {
        if slice.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(meta.name.clone()));
        }
    }

    let t = state.step + 1;
    let hyper = state.hyper;
    let b1 = c::<F>(hyper.beta1);
    let b2 = c::<F>(hyper.beta2);
    let one_m_b1 = c::<F>(1.0 - hyper.beta1);
    let one_m_b2 = c::<F>(1.0 - hyper.beta2);
    let corr1 = c::<F>(1.0 / (1.0 - hyper.beta1.powi(t as i32)));
    let corr2 = c::<F>(1.0 / (1.0 - hyper.beta2.powi(t as i32)));
    let eps = c::<F>(hyper.eps);
    let lr_f = c::<F>(lr);
    let wd = c::<F>(hyper.weight_decay);

    let mut pslices = params.slices_mut();
    let mut mslices = state.m.slices_mut();
    let mut vslices = state.v.slices_mut();
    for i in 0..gslices.len() {
        let decay = state.metas[i].decay();
        let p = &mut pslices[i];
        let g = gslices[i];
        let m = &mut mslices[i];
        let v = &mut vslices[i];
        for j in 0..g.len() {
            m[j] = b1 * m[j] + one_m_b1 * g[j];
            v[j] = b2 * v[j] + one_m_b2 * g[j] * g[j];
            let m_hat = m[j] * corr1;
            let v_hat = v[j] * corr2;
            let mut update = m_hat / (v_hat.sqrt() + eps);
            if decay {
                update = update + wd * p[j];
            }
            p[j] = p[j] - lr_f * update;
        }
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_interpolates_linearly() {
        assert_relative_eq!(lr_schedule(500, 10_000, 1000, 1e-4), 5e-5);
        assert_relative_eq!(lr_schedule(1000, 10_000, 1000, 1e-4), 1e-4);
        assert_relative_eq!(lr_schedule(10_000, 10_000, 1000, 1e-4), 0.0);
        assert_relative_eq!(lr_schedule(0, 10_000, 1000, 1e-4), 0.0);
        assert_relative_eq!(lr_schedule(5500, 10_000, 1000, 1e-4), 5e-5);
        // no warmup starts at peak
        assert_relative_eq!(lr_schedule(0, 100, 0, 1e-4), 1e-4);
    }

    fn scalar_config() -> EncoderConfig {
        EncoderConfig {
            n_layers: 1,
            hidden: 4,
            n_heads: 1,
            ffn_dim: 4,
            max_positions: 4,
            vocab_size: 6,
            dropout: 0.0,
        }
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // g=1, lr=0.1: m_hat = v_hat = 1, update = -0.1/(1+eps)
        let config = scalar_config();
        let mut params = EncoderParams::<f64>::zeros(&config);
        let mut grads = EncoderParams::<f64>::zeros(&config);
        grads.slices_mut()[0][0] = 1.0;
        let hyper = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        let mut state = OptimizerState::new(&config, hyper);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        let got = params.slices()[0][0];
        assert_relative_eq!(got, -0.1 / (1.0 + 1e-6), epsilon = 1e-12);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_zero_state_leaves_params_unchanged() {
        let config = scalar_config();
        let mut params = EncoderParams::<f64>::init(&config, 5).unwrap();
        let before = params.clone();
        let grads = EncoderParams::<f64>::zeros(&config);
        let hyper = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        let mut state = OptimizerState::new(&config, hyper);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn weight_decay_skips_biases_and_layer_norms() {
        let config = scalar_config();
        let mut params = EncoderParams::<f64>::zeros(&config);
        // set every tensor to 1.0, take a zero-gradient step
        for s in params.slices_mut() {
            s.fill(1.0);
        }
        let grads = EncoderParams::<f64>::zeros(&config);
        let mut state = OptimizerState::new(&config, AdamHyper::default());
        adam_step(&mut params, &grads, &mut state, 0.5).unwrap();
        let metas = manifest(&config);
        for (meta, slice) in metas.iter().zip(params.slices()) {
            if meta.decay() {
                // decayed: 1 - 0.5*0.01
                assert_relative_eq!(slice[0], 0.995, epsilon = 1e-12);
            } else {
                assert_relative_eq!(slice[0], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_tensor_name() {
        let config = scalar_config();
        let mut params = EncoderParams::<f64>::zeros(&config);
        let mut grads = EncoderParams::<f64>::zeros(&config);
        grads.pos_emb[[0, 0]] = f64::NAN;
        let mut state = OptimizerState::new(&config, AdamHyper::default());
        let err = adam_step(&mut params, &grads, &mut state, 0.1).unwrap_err();
        assert!(err.to_string().contains("position_embedding"));
    }

    #[test]
    fn deterministic_across_runs() {
        let config = scalar_config();
        let run = || {
            let mut params = EncoderParams::<f32>::init(&config, 3).unwrap();
            let mut grads = EncoderParams::<f32>::zeros(&config);
            for (i, s) in grads.slices_mut().into_iter().enumerate() {
                for (j, g) in s.iter_mut().enumerate() {
                    *g = ((i * 31 + j * 7) % 13) as f32 * 0.01 - 0.06;
                }
            }
            let mut state = OptimizerState::new(&config, AdamHyper::default());
            for step in 0..10 {
                let lr = lr_schedule(step + 1, 10, 2, 1e-3);
                adam_step(&mut params, &grads, &mut state, lr).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}
