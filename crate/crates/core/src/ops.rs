//! Forward kernels for every differentiable primitive.
//!
//! These are plain functions on [`Tensor`]s. The tape in [`crate::tape`]
//! calls them to produce node values and to replay a recorded graph.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fill value for masked-out attention scores. Finite so that every tensor
/// stays finite; `exp` of it underflows to exactly zero.
pub const MASK_FILL: f64 = -1e30;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::contract(format!(
            "{op} expects a rank-2 tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err("matmul", a, b));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_rank2("transpose", a)?;
    let d = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

fn zip_with(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

/// `x + bias` with `bias` broadcast along the last axis. This is the only
/// broadcast the engine supports.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.rank() != 1 || bias.len() != x.last_dim() {
        return Err(shape_err("add_bias", x, bias));
    }
    let c = x.last_dim();
    let b = bias.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b[i % c])
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

pub fn scale(x: &Tensor, s: f64) -> Tensor {
    x.map(|v| v * s)
}

pub fn shift(x: &Tensor, s: f64) -> Tensor {
    x.map(|v| v + s)
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

/// Split a shape around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::contract(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// `x - logsumexp(x)` along `axis`, max-shifted.
pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = axis_extents(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| d[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..n).map(|k| (d[idx(k)] - max).exp()).sum::<f64>().ln();
            for k in 0..n {
                out[idx(k)] = d[idx(k)] - lse;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Softmax along the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let c = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Per-row normalization statistics over the last axis: (mean, 1/sqrt(var+eps)).
pub(crate) fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    // A constant row with eps = 0 normalizes to zeros rather than NaN.
    let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
    (mean, inv)
}

/// Layer normalization over the last axis followed by `gain * xhat + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let c = x.last_dim();
    if gain.rank() != 1 || gain.len() != c {
        return Err(shape_err("layer_norm gain", x, gain));
    }
    if bias.rank() != 1 || bias.len() != c {
        return Err(shape_err("layer_norm bias", x, bias));
    }
    let (g, b) = (gain.data(), bias.data());
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(c) {
        let (mean, inv) = row_stats(row, eps);
        out.extend(row.iter().enumerate().map(|(j, &v)| (v - mean) * inv * g[j] + b[j]));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Replace entries above the diagonal of a square matrix with [`MASK_FILL`].
pub fn causal_mask(x: &Tensor) -> Result<Tensor> {
    let (r, c) = require_rank2("causal_mask", x)?;
    if r != c {
        return Err(Error::contract(format!(
            "causal_mask expects a square matrix, got {r}x{c}"
        )));
    }
    let mut out = x.data().to_vec();
    for i in 0..r {
        for v in &mut out[i * c + i + 1..(i + 1) * c] {
            *v = MASK_FILL;
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// Select rows of `src` (viewed as `[rows, last_dim]`).
pub fn gather_rows(src: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let n = src.rows();
    if rows.is_empty() {
        return Err(Error::contract("gather_rows needs at least one row"));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::Range(format!(
            "row index {bad} out of range for {n} rows"
        )));
    }
    let c = src.last_dim();
    let mut out = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        out.extend_from_slice(src.row(r));
    }
    Ok(Tensor::from_parts(vec![rows.len(), c], out))
}

/// Stack tensors with a common last axis into one `[total_rows, last_dim]`.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat_rows needs at least one input"))?;
    let c = first.last_dim();
    let mut out = Vec::new();
    for p in parts {
        if p.last_dim() != c {
            return Err(shape_err("concat_rows", first, p));
        }
        out.extend_from_slice(p.data());
    }
    let rows = out.len() / c;
    Ok(Tensor::from_parts(vec![rows, c], out))
}

/// Gather elements by flat row-major index into a vector.
pub fn pick(src: &Tensor, index: &[usize]) -> Result<Tensor> {
    if index.is_empty() {
        return Err(Error::contract("pick needs at least one index"));
    }
    let d = src.data();
    let mut out = Vec::with_capacity(index.len());
    for &i in index {
        out.push(*d.get(i).ok_or_else(|| {
            Error::Range(format!("flat index {i} out of range for {} elements", d.len()))
        })?);
    }
    Ok(Tensor::vector(out))
}

pub fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.sum())
}

pub fn mean(x: &Tensor) -> Tensor {
    Tensor::scalar(x.sum() / x.len() as f64)
}
