use ndarray::{Array, ArrayView, Dimension};

use crate::error::{Error, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Elementwise `max(x, slope * x)`.
pub fn leaky_relu<D: Dimension>(x: ArrayView<f64, D>, slope: f64) -> Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

/// Gradient of [`leaky_relu`]; the subderivative at exactly 0 is `slope`.
pub fn leaky_relu_backward<D: Dimension>(
    input: ArrayView<f64, D>,
    upstream: ArrayView<f64, D>,
    slope: f64,
) -> Result<Array<f64, D>> {
    if input.shape() != upstream.shape() {
        return Err(Error::shape(format!(
            "leaky_relu upstream {:?} does not match input {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    let mut grad = upstream.to_owned();
    grad.zip_mut_with(&input, |g, &x| {
        if x <= 0.0 {
            *g *= slope;
        }
    });
    Ok(grad)
}
