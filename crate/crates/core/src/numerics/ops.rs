//! Forward kernels and their exact backward passes.
//!
//! Every `*_backward` takes the upstream gradient with respect to the
//! forward output and returns the gradient with respect to its input.

use crate::error::{NcdError, Result};
use crate::numerics::tensor::dot;
use crate::numerics::{Param, Tensor};

/// Floor applied before dividing by a norm.
pub const NORM_EPS: f64 = 1e-12;

/// `x W + b` for `x: [B, d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, d_in) = x.dims2()?;
    let (w_in, d_out) = w.dims2()?;
    if w_in != d_in {
        return Err(NcdError::Dimension(format!(
            "affine: input has {d_in} columns but weight expects {w_in}"
        )));
    }
    if b.shape() != [d_out] {
        return Err(NcdError::Dimension(format!(
            "affine: bias shape {:?}, expected [{d_out}]",
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(rows * d_out);
    let wd = w.data();
    for r in 0..rows {
        let mut acc = b.data().to_vec();
        for (k, &xv) in x.row(r).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[k * d_out..(k + 1) * d_out];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xv * wv;
            }
        }
        out.extend_from_slice(&acc);
    }
    Ok(Tensor::from_parts(vec![rows, d_out], out))
}

/// Gradients of `x W + b`: returns `(dx, dW, db)`.
pub fn affine_grads(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, d_in) = x.dims2()?;
    let (_, d_out) = w.dims2()?;
    if grad_out.shape() != [rows, d_out] {
        return Err(NcdError::Dimension(format!(
            "affine backward: upstream gradient shape {:?}, expected [{rows}, {d_out}]",
            grad_out.shape()
        )));
    }
    let wd = w.data();
    let mut dx = vec![0.0; rows * d_in];
    let mut dw = vec![0.0; d_in * d_out];
    let mut db = vec![0.0; d_out];
    for r in 0..rows {
        let g = grad_out.row(r);
        let xr = x.row(r);
        for (k, dxk) in dx[r * d_in..(r + 1) * d_in].iter_mut().enumerate() {
            *dxk = dot(&wd[k * d_out..(k + 1) * d_out], g);
        }
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (dwv, &gv) in dw[k * d_out..(k + 1) * d_out].iter_mut().zip(g) {
                *dwv += xv * gv;
            }
        }
        for (dbv, &gv) in db.iter_mut().zip(g) {
            *dbv += gv;
        }
    }
    Ok((
        Tensor::from_parts(vec![rows, d_in], dx),
        Tensor::from_parts(vec![d_in, d_out], dw),
        Tensor::from_parts(vec![d_out], db),
    ))
}

/// Backward of an affine layer that accumulates into the parameter
/// gradients and returns `dL/dx`.
pub fn affine_backward(
    x: &Tensor,
    w: &mut Param,
    b: &mut Param,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (dx, dw, db) = affine_grads(x, &w.value, grad_out)?;
    w.accumulate(&dw)?;
    b.accumulate(&db)?;
    Ok(dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let (rows, _) = x.dims2()?;
    let mut out = x.clone();
    for r in 0..rows {
        let norm = dot(x.row(r), x.row(r)).sqrt();
        if norm < NORM_EPS {
            return Err(NcdError::Degenerate(format!("row {r} has norm {norm:e}")));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// `dx = (g - y (y . g)) / |x|` with `y = x / |x|`.
pub fn l2_normalize_backward(x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = grad_out.clone();
    for r in 0..x.rows() {
        let norm = dot(x.row(r), x.row(r)).sqrt().max(NORM_EPS);
        let yg = dot(y.row(r), grad_out.row(r));
        for (d, &yv) in dx.row_mut(r).iter_mut().zip(y.row(r)) {
            *d = (*d - yv * yg) / norm;
        }
    }
    dx
}

/// Row-wise softmax with max shift.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    x.ensure_finite("softmax input")?;
    let (rows, _) = x.dims2()?;
    let mut out = x.clone();
    for r in 0..rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// `dx = y * (g - (g . y))`.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = grad_out.clone();
    for r in 0..y.rows() {
        let gy = dot(grad_out.row(r), y.row(r));
        for (d, &yv) in dx.row_mut(r).iter_mut().zip(y.row(r)) {
            *d = yv * (*d - gy);
        }
    }
    dx
}

/// Column-wise concatenation of two matrices with equal row counts.
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = a.dims2()?;
    let (rb, cb) = b.dims2()?;
    if ra != rb {
        return Err(NcdError::Dimension(format!(
            "concat: {ra} rows vs {rb} rows"
        )));
    }
    let mut data = Vec::with_capacity(ra * (ca + cb));
    for r in 0..ra {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Ok(Tensor::from_parts(vec![ra, ca + cb], data))
}

pub fn split_cols(g: &Tensor, left: usize) -> (Tensor, Tensor) {
    let rows = g.rows();
    let c = g.cols();
    let mut a = Vec::with_capacity(rows * left);
    let mut b = Vec::with_capacity(rows * (c - left));
    for r in 0..rows {
        let row = g.row(r);
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    (
        Tensor::from_parts(vec![rows, left], a),
        Tensor::from_parts(vec![rows, c - left], b),
    )
}
