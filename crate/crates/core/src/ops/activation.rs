use crate::error::Result;
use crate::tensor::{Real, Tensor4};

pub fn relu(input: &Tensor4) -> Tensor4 {
    input.map(|v| v.max(0.0))
}

/// Passes upstream where the input was strictly positive.
pub fn relu_grad(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    input.zip_map(upstream, "relu_grad", |x, u| if x > 0.0 { u } else { 0.0 })
}

#[inline]
pub fn sigmoid_scalar(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor4) -> Tensor4 {
    input.map(sigmoid_scalar)
}

/// Gradient of the sigmoid given its input.
pub fn sigmoid_grad(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    input.zip_map(upstream, "sigmoid_grad", |x, u| {
        let s = sigmoid_scalar(x);
        u * s * (1.0 - s)
    })
}

/// Same as [`sigmoid_grad`] but from the already computed output.
pub(crate) fn sigmoid_grad_from_output(output: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    output.zip_map(upstream, "sigmoid_grad", |s, u| u * s * (1.0 - s))
}
