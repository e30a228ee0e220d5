//! Differentiable primitives. Each forward has a matching `*_backward` that
//! maps the upstream gradient onto every input.

use crate::fault::{self, BackwardOp};
use crate::tensor::{mismatch, Tensor, TensorError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    if t.shape().len() != 2 {
        return Err(mismatch(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `A·B` with an i-k-j loop so the inner loop runs over contiguous rows.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o += av * bv);
        }
    }
    Tensor::matrix(m, n, out)
}

/// `A·Bᵀ` for `A: m×k`, `B: n×k`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = require_matrix("matmul_bt", a)?;
    let (n, k2) = require_matrix("matmul_bt", b)?;
    if k != k2 {
        return Err(mismatch("matmul_bt", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out.push(dot(ar, b.row(j)));
        }
    }
    Tensor::matrix(m, n, out)
}

/// `Aᵀ·B` for `A: k×m`, `B: k×n`.
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (k, m) = require_matrix("matmul_at", a)?;
    let (k2, n) = require_matrix("matmul_at", b)?;
    if k != k2 {
        return Err(mismatch("matmul_at", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let (ar, br) = (a.row(p), b.row(p));
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            out[i * n..(i + 1) * n].iter_mut().zip(br).for_each(|(o, &bv)| *o += av * bv);
        }
    }
    Tensor::matrix(m, n, out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
    let mut da = matmul_bt(dc, b)?;
    let mut db = matmul_at(a, dc)?;
    fault::apply(BackwardOp::Matmul, &mut da);
    fault::apply(BackwardOp::Matmul, &mut db);
    Ok((da, db))
}

/// `y = x·Wᵀ + b` with `W: out×in`, `b: out`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (out_dim, in_dim) = require_matrix("linear", w)?;
    if b.len() != out_dim || x.cols() != in_dim {
        return Err(mismatch("linear", x.shape(), w.shape()));
    }
    let x2 = as_matrix(x);
    let mut y = matmul_bt(&x2, w)?;
    for i in 0..y.rows() {
        y.row_mut(i).iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
    }
    if x.shape().len() == 1 {
        y = y.reshape(vec![out_dim])?;
    }
    Ok(y)
}

fn as_matrix(x: &Tensor) -> Tensor {
    if x.shape().len() == 1 {
        x.clone().reshape(vec![1, x.len()]).expect("vector to row matrix")
    } else {
        x.clone()
    }
}

pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<LinearGrads, TensorError> {
    let x2 = as_matrix(x);
    let dy2 = as_matrix(dy);
    if dy2.cols() != w.shape()[0] || dy2.rows() != x2.rows() {
        return Err(mismatch("linear_backward", dy.shape(), w.shape()));
    }
    let mut dx = matmul(&dy2, w)?;
    let mut dw = matmul_at(&dy2, &x2)?;
    let mut db = Tensor::zeros(&[w.shape()[0]]);
    for i in 0..dy2.rows() {
        db.data_mut().iter_mut().zip(dy2.row(i)).for_each(|(d, g)| *d += g);
    }
    if x.shape().len() == 1 {
        dx = dx.reshape(vec![x.len()])?;
    }
    fault::apply(BackwardOp::Linear, &mut dx);
    fault::apply(BackwardOp::Linear, &mut dw);
    fault::apply(BackwardOp::Linear, &mut db);
    Ok(LinearGrads { dx, dw, db })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for i in 0..y.rows() {
        softmax_in_place(y.row_mut(i));
    }
    y
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Given `y = softmax(x)` per row, `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor, TensorError> {
    if y.shape() != dy.shape() {
        return Err(mismatch("softmax_rows_backward", y.shape(), dy.shape()));
    }
    let mut dx = dy.clone();
    for i in 0..y.rows() {
        let yr = y.row(i);
        let s = dot(yr, dy.row(i));
        dx.row_mut(i).iter_mut().zip(yr).for_each(|(d, &yv)| *d = yv * (*d - s));
    }
    fault::apply(BackwardOp::Softmax, &mut dx);
    Ok(dx)
}

/// Per-row normalized values and inverse standard deviations.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<(Tensor, LayerNormCache), TensorError> {
    let n = x.cols();
    if gain.len() != n || bias.len() != n {
        return Err(mismatch("layer_norm", x.shape(), gain.shape()));
    }
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    let mut y = x.clone();
    for i in 0..x.rows() {
        let row = xhat.row_mut(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let r = 1.0 / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * r);
        inv_std.push(r);
        let xr = xhat.row(i).to_vec();
        for (j, out) in y.row_mut(i).iter_mut().enumerate() {
            *out = gain.data()[j] * xr[j] + bias.data()[j];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

pub struct LayerNormGrads {
    pub dx: Tensor,
    pub dgain: Tensor,
    pub dbias: Tensor,
}

pub fn layer_norm_backward(cache: &LayerNormCache, gain: &Tensor, dy: &Tensor) -> Result<LayerNormGrads, TensorError> {
    if dy.shape() != cache.xhat.shape() {
        return Err(mismatch("layer_norm_backward", dy.shape(), cache.xhat.shape()));
    }
    let n = dy.cols();
    let mut dx = dy.clone();
    let mut dgain = Tensor::zeros(&[n]);
    let mut dbias = Tensor::zeros(&[n]);
    let mut dxhat = vec![0.0; n];
    for i in 0..dy.rows() {
        let (xh, g) = (cache.xhat.row(i), dy.row(i));
        for j in 0..n {
            dgain.data_mut()[j] += g[j] * xh[j];
            dbias.data_mut()[j] += g[j];
            dxhat[j] = g[j] * gain.data()[j];
        }
        let sum: f64 = dxhat.iter().sum();
        let sum_x: f64 = dot(&dxhat, xh);
        let r = cache.inv_std[i] / n as f64;
        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
            *d = r * (n as f64 * dxhat[j] - sum - xh[j] * sum_x);
        }
    }
    fault::apply(BackwardOp::LayerNorm, &mut dx);
    fault::apply(BackwardOp::LayerNorm, &mut dgain);
    fault::apply(BackwardOp::LayerNorm, &mut dbias);
    Ok(LayerNormGrads { dx, dgain, dbias })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        let t = (GELU_C * (*v + GELU_A * *v * *v * *v)).tanh();
        *v = 0.5 * *v * (1.0 + t);
    });
    y
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor, TensorError> {
    if x.shape() != dy.shape() {
        return Err(mismatch("gelu_backward", x.shape(), dy.shape()));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
        let deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *d *= deriv;
    }
    fault::apply(BackwardOp::Gelu, &mut dx);
    Ok(dx)
}

/// Mean over rows of an `m×n` matrix, returned as a length-`n` vector.
pub fn mean_pool_rows(x: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = require_matrix("mean_pool_rows", x)?;
    if m == 0 {
        return Err(mismatch("mean_pool_rows", x.shape(), &[1, n]));
    }
    let mut out = vec![0.0; n];
    for i in 0..m {
        out.iter_mut().zip(x.row(i)).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= m as f64);
    Ok(Tensor::vector(out))
}

/// Spreads `dy / m` to each of `m` rows.
pub fn mean_pool_rows_backward(m: usize, dy: &Tensor) -> Tensor {
    let n = dy.len();
    let mut dx = Tensor::zeros(&[m, n]);
    for i in 0..m {
        dx.row_mut(i).iter_mut().zip(dy.data()).for_each(|(d, g)| *d = g / m as f64);
    }
    fault::apply(BackwardOp::MeanPool, &mut dx);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        assert!(matmul(&b, &b).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 4.0, 0.0, 3.0]).unwrap();
        let b = Tensor::matrix(4, 3, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let bt = Tensor::matrix(3, 4, (0..12).map(|i| b.data()[(i % 4) * 3 + i / 4]).collect()).unwrap();
        assert_eq!(matmul_bt(&a, &b).unwrap(), matmul(&a, &bt).unwrap());
        let at = Tensor::matrix(3, 2, (0..6).map(|i| a.data()[(i % 2) * 3 + i / 2]).collect()).unwrap();
        assert_eq!(matmul_at(&a, &a).unwrap(), matmul(&at, &a).unwrap());
    }

    #[test]
    fn softmax_is_stable() {
        let y = softmax_rows(&Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1000.0, 0.0, -1000.0]).unwrap());
        assert!(y.row(0).iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!((y.row(1)[0] - 1.0).abs() < 1e-15 && y.is_finite());
    }

    #[test]
    fn gelu_reference_points() {
        let y = gelu(&Tensor::vector(vec![0.0, 1.0, -1.0]));
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.841_191_990_607_535_2).abs() < 1e-12);
        assert!((y.data()[2] + 0.158_808_009_392_464_8).abs() < 1e-12);
    }

    #[test]
    fn linear_accepts_vectors() {
        let w = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![0.5, -0.5]);
        let y = linear(&Tensor::vector(vec![1.0, 2.0, 3.0]), &w, &b).unwrap();
        assert_eq!(y.shape(), &[2]);
        assert_eq!(y.data(), &[1.5, 4.5]);
    }
}
