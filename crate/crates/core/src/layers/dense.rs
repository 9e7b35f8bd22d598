use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// F_in x F_out
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseParams {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Array2::zeros((in_features, out_features)),
            bias: Array1::zeros(out_features),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_features(&self) -> usize {
        self.weight.ncols()
    }

    /// Row-wise `x W + b` on a `B x F_in` batch.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        if x.ncols() != self.in_features() || self.bias.len() != self.out_features() {
            return Err(Error::shape(format!(
                "dense layer {}x{} applied to input with {} features",
                self.in_features(),
                self.out_features(),
                x.ncols()
            )));
        }
        let out = x.dot(&self.weight) + &self.bias;
        Ok((out, DenseCache { input: x.to_owned() }))
    }

    pub fn backward(&self, cache: &DenseCache, upstream: ArrayView2<f64>) -> Result<DenseGrads> {
        if upstream.dim() != (cache.input.nrows(), self.out_features()) {
            return Err(Error::shape(format!(
                "dense upstream gradient {:?} does not match output ({}, {})",
                upstream.dim(),
                cache.input.nrows(),
                self.out_features()
            )));
        }
        Ok(DenseGrads {
            weight: cache.input.t().dot(&upstream).as_standard_layout().into_owned(),
            bias: upstream.sum_axis(Axis(0)),
            input: upstream.dot(&self.weight.t()).as_standard_layout().into_owned(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub input: Array2<f64>,
}

/// `W^T x + b` for a single feature vector.
pub fn dense_forward(x: ArrayView1<f64>, params: &DenseParams) -> Result<Array1<f64>> {
    if x.len() != params.in_features() || params.bias.len() != params.out_features() {
        return Err(Error::shape(format!(
            "dense layer {}x{} applied to vector of length {}",
            params.in_features(),
            params.out_features(),
            x.len()
        )));
    }
    Ok(params.weight.t().dot(&x) + &params.bias)
}
