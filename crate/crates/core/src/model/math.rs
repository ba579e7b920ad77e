//! Scalar abstraction and shared layer math.
//!
//! Training runs in f32; the same forward/backward code instantiated at
//! f64 backs the finite-difference gradient checks, so the checked path is
//! the trained path.

use ndarray::{Array1, Array2, Axis, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;

/// Element type of all model tensors.
pub trait Scalar: NdFloat + FromPrimitive {
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shorthand for lossless-enough f64 -> F constant conversion.
pub fn c<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("finite constant")
}

pub const LN_EPS: f64 = 1e-5;

const GELU_A: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_B: f64 = 0.044715;

/// GELU, tanh approximation.
pub fn gelu<F: Scalar>(x: F) -> F {
    let half = c::<F>(0.5);
    let a = c::<F>(GELU_A);
    let b = c::<F>(GELU_B);
    let inner = a * (x + b * x * x * x);
    half * x * (F::one() + inner.tanh())
}

/// Derivative of the tanh-approximation GELU.
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = c::<F>(0.5);
    let a = c::<F>(GELU_A);
    let b = c::<F>(GELU_B);
    let three = c::<F>(3.0);
    let t = (a * (x + b * x * x * x)).tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * a * (F::one() + three * b * x * x)
}

/// Per-row layer norm state needed by the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache<F> {
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// Row-wise layer normalization: `y = xhat * gain + bias`.
pub fn layer_norm_forward<F: Scalar>(
    x: &Array2<F>,
    gain: &Array1<F>,
    bias: &Array1<F>,
) -> (Array2<F>, LnCache<F>) {
    let (n, d) = x.dim();
    let eps = c::<F>(LN_EPS);
    let inv_d = c::<F>(1.0 / d as f64);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(n);
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() * inv_d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) * inv_d;
        *s = F::one() / (var + eps).sqrt();
        let si = *s;
        row.mapv_inplace(|v| v * si);
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        row.zip_mut_with(gain, |v, &g| *v = *v * g);
        row.zip_mut_with(bias, |v, &b| *v = *v + b);
    }
    (y, LnCache { xhat, inv_std })
}

/// Backward through row-wise layer norm. Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    gain: &Array1<F>,
    cache: &LnCache<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let (n, d) = dy.dim();
    let inv_d = c::<F>(1.0 / d as f64);
    let mut dgain = Array1::zeros(d);
    let mut dbias = Array1::zeros(d);
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let dy_row = dy.row(i);
        let xhat_row = cache.xhat.row(i);
        // accumulate parameter grads
        for j in 0..d {
            dgain[j] = dgain[j] + dy_row[j] * xhat_row[j];
            dbias[j] = dbias[j] + dy_row[j];
        }
        // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            mean_dxhat = mean_dxhat + dxh;
            mean_dxhat_xhat = mean_dxhat_xhat + dxh * xhat_row[j];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        let s = cache.inv_std[i];
        let mut dx_row = dx.row_mut(i);
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            dx_row[j] = s * (dxh - mean_dxhat - xhat_row[j] * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

/// In-place row-wise softmax, numerically stabilized.
pub fn softmax_rows<F: Scalar>(x: &mut Array2<F>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum = sum + e;
            e
        });
        let inv = F::one() / sum;
        row.mapv_inplace(|v| v * inv);
    }
}

/// Backward through softmax given its output `a` and upstream `da`.
pub fn softmax_backward<F: Scalar>(a: &Array2<F>, da: &Array2<F>) -> Array2<F> {
    let mut ds = da.clone();
    for (mut ds_row, a_row) in ds.rows_mut().into_iter().zip(a.rows()) {
        let dot = ds_row
            .iter()
            .zip(a_row.iter())
            .map(|(&d, &av)| d * av)
            .fold(F::zero(), |x, y| x + y);
        ds_row
            .iter_mut()
            .zip(a_row.iter())
            .for_each(|(d, &av)| *d = av * (*d - dot));
    }
    ds
}

/// Inverted-dropout multiplier matrix: entries are 0 with probability `p`,
/// else `1/(1-p)`. Drawn row-major so consumption order is deterministic.
pub fn dropout_mask<F: Scalar, R: Rng>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<F> {
    let scale = c::<F>(1.0 / (1.0 - p));
    let mut m = Array2::zeros(shape);
    for v in m.iter_mut() {
        if rng.gen::<f64>() >= p {
            *v = scale;
        }
    }
    m
}

/// Column sums, as a 1-D array.
pub fn col_sums<F: Scalar>(x: &Array2<F>) -> Array1<F> {
    x.sum_axis(Axis(0))
}
