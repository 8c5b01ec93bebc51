//! Row-wise building blocks with explicit backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::params::{Linear, Norm};
use super::ModelRng;

pub const LN_EPS: f64 = 1e-5;

pub fn linear(x: &ArrayView2<f64>, l: &Linear) -> Array2<f64> {
    let mut y = x.dot(&l.w);
    y += &l.b;
    y
}

/// Accumulate parameter gradients; returns `dL/dx` when requested.
pub fn linear_backward(
    x: &ArrayView2<f64>,
    dy: &Array2<f64>,
    l: &Linear,
    g: &mut Linear,
    want_dx: bool,
) -> Option<Array2<f64>> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.w);
    g.b += &dy.sum_axis(Axis(0));
    want_dx.then(|| dy.dot(&l.w.t()))
}

pub struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &Array2<f64>, p: &Norm) -> (Array2<f64>, LnCache) {
    let (rows, d) = x.dim();
    let mut xhat = Array2::zeros((rows, d));
    let mut rstd = Vec::with_capacity(rows);
    for (r, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        for (o, v) in xhat.row_mut(r).iter_mut().zip(row.iter()) {
            *o = (v - mean) * rs;
        }
    }
    let mut y = &xhat * &p.gamma;
    y += &p.beta;
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    p: &Norm,
    g: &mut Norm,
) -> Array2<f64> {
    let (rows, d) = dy.dim();
    g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    g.beta += &dy.sum_axis(Axis(0));
    let mut dx = Array2::zeros((rows, d));
    for r in 0..rows {
        let dyr = dy.row(r);
        let xr = cache.xhat.row(r);
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_x = 0.0;
        for k in 0..d {
            let dxh = dyr[k] * p.gamma[k];
            mean_dxhat += dxh;
            mean_dxhat_x += dxh * xr[k];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_x /= d as f64;
        let rs = cache.rstd[r];
        let mut out = dx.row_mut(r);
        for k in 0..d {
            let dxh = dyr[k] * p.gamma[k];
            out[k] = rs * (dxh - mean_dxhat - xr[k] * mean_dxhat_x);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// `tanh` through a single `exp`; absolute error stays at rounding level.
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_K * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = fast_tanh(u);
    let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - p)`.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut ModelRng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Softmax of each row in place.
pub fn softmax_rows(x: &mut [f64], n: usize) {
    for row in x.chunks_mut(n) {
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

/// Geometry shared by the attention kernels.
#[derive(Debug, Clone, Copy)]
pub struct AttnShape {
    pub batch: usize,
    pub tokens: usize,
    pub heads: usize,
    pub d_model: usize,
}

impl AttnShape {
    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Copy head `h` of sample `b` out of the packed rows: part 0 = q, 1 = k, 2 = v.
fn gather(qkv: &Array2<f64>, sh: AttnShape, b: usize, h: usize, part: usize) -> Array2<f64> {
    let (t, d, dh) = (sh.tokens, sh.d_model, sh.d_head());
    let off = part * d + h * dh;
    qkv.slice(s![b * t..(b + 1) * t, off..off + dh]).to_owned()
}

/// Multi-head attention over packed `[q | k | v]` rows.
///
/// `biases[b]` is the `tokens × tokens` scale-bias matrix of sample `b`; when
/// `biases` is `None` no bias term is added at all. Returns the concatenated
/// head outputs and the attention weights laid out `[b][h][i][j]`.
pub fn attention_forward(
    qkv: &Array2<f64>,
    biases: Option<&[Array2<f64>]>,
    alpha: &[f64],
    sh: AttnShape,
) -> (Array2<f64>, Vec<f64>) {
    let (t, dh) = (sh.tokens, sh.d_head());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((sh.batch * t, sh.d_model));
    let mut attn = vec![0.0; sh.batch * sh.heads * t * t];
    for b in 0..sh.batch {
        for h in 0..sh.heads {
            let q = gather(qkv, sh, b, h, 0);
            let k = gather(qkv, sh, b, h, 1);
            let v = gather(qkv, sh, b, h, 2);
            let a = &mut attn[(b * sh.heads + h) * t * t..][..t * t];
            let mut logits = ArrayViewMut2::from_shape((t, t), a).expect("square block");
            general_mat_mul(scale, &q, &k.t(), 0.0, &mut logits);
            if let Some(bias) = biases {
                logits.scaled_add(alpha[h], &bias[b]);
            }
            softmax_rows(a, t);
            let w = ArrayView2::from_shape((t, t), &*a).expect("square block");
            let mut o = out.slice_mut(s![b * t..(b + 1) * t, h * dh..(h + 1) * dh]);
            general_mat_mul(1.0, &w, &v, 0.0, &mut o);
        }
    }
    (out, attn)
}

/// Backward of [`attention_forward`]. Returns `dL/dqkv`; adds into `dalpha`.
pub fn attention_backward(
    qkv: &Array2<f64>,
    attn: &[f64],
    dout: &Array2<f64>,
    biases: Option<&[Array2<f64>]>,
    dalpha: &mut [f64],
    sh: AttnShape,
) -> Array2<f64> {
    let (t, d, dh) = (sh.tokens, sh.d_model, sh.d_head());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = Array2::zeros(qkv.dim());
    let mut da = Array2::zeros((t, t));
    for b in 0..sh.batch {
        let rows = b * t..(b + 1) * t;
        for h in 0..sh.heads {
            let q = gather(qkv, sh, b, h, 0);
            let k = gather(qkv, sh, b, h, 1);
            let v = gather(qkv, sh, b, h, 2);
            let w = ArrayView2::from_shape((t, t), &attn[(b * sh.heads + h) * t * t..][..t * t])
                .expect("square block");
            let cols = h * dh..(h + 1) * dh;
            let go = dout.slice(s![rows.clone(), cols.clone()]);
            {
                let mut dv = dqkv.slice_mut(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                general_mat_mul(1.0, &w.t(), &go, 0.0, &mut dv);
            }
            general_mat_mul(1.0, &go, &v.t(), 0.0, &mut da);
            // softmax backward in place: ds = a * (da - rowsum(da * a))
            for (mut dr, ar) in da.rows_mut().into_iter().zip(w.rows()) {
                let dot: f64 = dr.iter().zip(ar.iter()).map(|(x, y)| x * y).sum();
                dr.zip_mut_with(&ar, |x, &y| *x = y * (*x - dot));
            }
            if let Some(bias) = biases {
                dalpha[h] += (&da * &bias[b]).sum();
            }
            {
                let mut dq = dqkv.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]);
                general_mat_mul(scale, &da, &k, 0.0, &mut dq);
            }
            let mut dk = dqkv.slice_mut(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
            general_mat_mul(scale, &da.t(), &q, 0.0, &mut dk);
        }
    }
    dqkv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut x = vec![1.0, 2.0, 3.0, -1e3, 0.0, 1e3];
        softmax_rows(&mut x, 3);
        assert!((x[..3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((x[3..].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(x.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let x = Array2::from_shape_fn((3, 8), |(i, j)| (i * 8 + j) as f64 * 0.37 - 2.0);
        let p = Norm {
            gamma: ndarray::Array1::ones(8),
            beta: ndarray::Array1::zeros(8),
        };
        let (y, _) = layer_norm(&x, &p);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 8.0;
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
