//! Dense building blocks with hand-written backward passes.
//!
//! Matrices are row-major with one node per row, so a linear layer is
//! `X · W` with `W` of shape `in × out`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its pre-activation.
pub fn relu_backward(grad: &Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    Zip::from(&mut out).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

/// `x · w` with gradient accumulation helper below.
pub fn linear(x: ArrayView2<'_, f64>, w: &Array2<f64>) -> Array2<f64> {
    x.dot(w)
}

/// Backward of `y = x · w`: accumulates `xᵀ g` into `grad_w`, returns `g wᵀ`.
pub fn linear_backward(
    grad: &Array2<f64>,
    x: ArrayView2<'_, f64>,
    w: &Array2<f64>,
    grad_w: &mut Array2<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), grad, 1.0, grad_w);
    grad.dot(&w.t())
}

/// Saved state of a row-wise layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub fn layer_norm(
    x: &Array2<f64>,
    scale: &Array1<f64>,
    shift: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let width = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
        *s = inv;
    }
    let y = &xhat * scale + shift;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    grad: &Array2<f64>,
    cache: &LayerNormCache,
    scale: &Array1<f64>,
    grad_scale: &mut Array1<f64>,
    grad_shift: &mut Array1<f64>,
) -> Array2<f64> {
    *grad_scale += &(grad * &cache.xhat).sum_axis(Axis(0));
    *grad_shift += &grad.sum_axis(Axis(0));
    let gxhat = grad * scale;
    let width = grad.ncols() as f64;
    let mut out = Array2::zeros(grad.raw_dim());
    for (((mut o, g), xh), &inv) in out
        .rows_mut()
        .into_iter()
        .zip(gxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / width;
        let mean_gx = g.dot(&xh) / width;
        Zip::from(&mut o)
            .and(&g)
            .and(&xh)
            .for_each(|o, &g, &x| *o = inv * (g - mean_g - x * mean_gx));
    }
    out
}

/// Row-wise softmax.
pub fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut out = s.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Backward of row softmax given its output `a`.
pub fn softmax_rows_backward(grad: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    let mut out = grad * a;
    for (mut o, ar) in out.rows_mut().into_iter().zip(a.rows()) {
        let dot = o.sum();
        Zip::from(&mut o).and(&ar).for_each(|o, &p| *o -= p * dot);
    }
    out
}

/// Uniform ±√(6/(fan_in+fan_out)) initialization.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

pub fn glorot_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Array1<f64> {
    let bound = (6.0 / (len + 1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array1::from_shape_simple_fn(len, || dist.sample(rng))
}

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

pub fn mean_rows(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0)) / x.nrows() as f64
}

pub fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}
