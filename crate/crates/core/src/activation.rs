//! Elementwise activations and their backward passes.

use crate::error::Result;
use crate::math;
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient through [`relu`], evaluated at the forward input `x`.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, "relu_backward", |v, g| if v > 0.0 { g } else { 0.0 })
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v < 0.0 { slope * v } else { v })
}

pub fn leaky_relu_backward(x: &Tensor, slope: f64, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, "leaky_relu_backward", |v, g| if v < 0.0 { slope * g } else { g })
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + math::exp(-v))
    } else {
        let e = math::exp(v);
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient through [`sigmoid`] given its forward *output* `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    y.zip_map(grad_out, "sigmoid_backward", |s, g| g * s * (1.0 - s))
}
