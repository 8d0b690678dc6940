//! Global average pooling, the affine head, and per-channel scaling.
//!
//! Vector batches are `n x features x 1 x 1` tensors; linear weights are
//! `classes x features x 1 x 1`.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Spatial mean per `(n, c)`.
pub fn gap(input: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = input.dims().0;
    let area = (h * w) as Real;
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            out.push(input.plane(b, ch).iter().sum::<Real>() / area);
        }
    }
    Tensor4::new(Dims::new(n, c, 1, 1), out).expect("gap output dims are non-zero")
}

/// Spreads each pooled gradient evenly over its spatial plane.
pub fn gap_grad(input_dims: Dims, upstream: &Tensor4) -> Result<Tensor4> {
    let [n, c, h, w] = input_dims.0;
    upstream.expect_dims("gap_grad upstream", Dims::new(n, c, 1, 1))?;
    let area = (h * w) as Real;
    let mut out = Vec::with_capacity(input_dims.len());
    for &u in upstream.data() {
        out.extend(std::iter::repeat_n(u / area, h * w));
    }
    Tensor4::new(input_dims, out)
}

fn check_linear(input: &Tensor4, weights: &Tensor4, bias: &[Real]) -> Result<(usize, usize, usize)> {
    let [n, f, h, w] = input.dims().0;
    if h != 1 || w != 1 {
        return Err(Error::shape("linear", format!("{n}x{f}x1x1"), input.dims()));
    }
    let [classes, wf, wh, ww] = weights.dims().0;
    if wf != f || wh != 1 || ww != 1 {
        return Err(Error::shape("linear", format!("weights {classes}x{f}x1x1"), weights.dims()));
    }
    if bias.len() != classes {
        return Err(Error::shape("linear bias", classes, bias.len()));
    }
    Ok((n, f, classes))
}

/// `out[b, k] = sum_j weights[k, j] * input[b, j] + bias[k]`.
pub fn linear(input: &Tensor4, weights: &Tensor4, bias: &[Real]) -> Result<Tensor4> {
    let (n, f, classes) = check_linear(input, weights, bias)?;
    let x = input.data();
    let wt = weights.data();
    let mut out = Vec::with_capacity(n * classes);
    for b in 0..n {
        let row = &x[b * f..(b + 1) * f];
        for k in 0..classes {
            let wk = &wt[k * f..(k + 1) * f];
            out.push(row.iter().zip(wk).map(|(a, w)| a * w).sum::<Real>() + bias[k]);
        }
    }
    Tensor4::new(Dims::new(n, classes, 1, 1), out)
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub d_input: Tensor4,
    pub d_weights: Tensor4,
    pub d_bias: Vec<Real>,
}

pub fn linear_grad(input: &Tensor4, weights: &Tensor4, bias: &[Real], upstream: &Tensor4) -> Result<LinearGrads> {
    let (n, f, classes) = check_linear(input, weights, bias)?;
    upstream.expect_dims("linear_grad upstream", Dims::new(n, classes, 1, 1))?;
    let x = input.data();
    let wt = weights.data();
    let up = upstream.data();
    let mut d_input = vec![0.0; n * f];
    let mut d_weights = vec![0.0; classes * f];
    let mut d_bias = vec![0.0; classes];
    for b in 0..n {
        for k in 0..classes {
            let u = up[b * classes + k];
            d_bias[k] += u;
            for j in 0..f {
                d_input[b * f + j] += u * wt[k * f + j];
                d_weights[k * f + j] += u * x[b * f + j];
            }
        }
    }
    Ok(LinearGrads {
        d_input: Tensor4::new(input.dims(), d_input)?,
        d_weights: Tensor4::new(weights.dims(), d_weights)?,
        d_bias,
    })
}

/// Multiplies channel `c` of sample `b` by `scale[b, c]`.
pub fn scale_channels(input: &Tensor4, scale: &Tensor4) -> Result<Tensor4> {
    let [n, c, _, _] = input.dims().0;
    scale.expect_dims("scale_channels", Dims::new(n, c, 1, 1))?;
    let p = input.dims().plane();
    let mut out = input.clone();
    for (i, chunk) in out.data_mut().chunks_mut(p).enumerate() {
        let s = scale.data()[i];
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

/// Returns `(d_input, d_scale)`.
pub fn scale_channels_grad(input: &Tensor4, scale: &Tensor4, upstream: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    upstream.expect_dims("scale_channels_grad upstream", input.dims())?;
    let d_input = scale_channels(upstream, scale)?;
    let p = input.dims().plane();
    let d_scale: Vec<Real> = input
        .data()
        .chunks(p)
        .zip(upstream.data().chunks(p))
        .map(|(x, u)| x.iter().zip(u).map(|(a, b)| a * b).sum())
        .collect();
    Ok((d_input, Tensor4::new(scale.dims(), d_scale)?))
}
