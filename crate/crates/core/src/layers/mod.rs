//! Differentiable building blocks with hand-written backward passes.
//!
//! Layers operate on a batch of graphs stacked row-wise: a batch of graphs
//! with `N_1, ..., N_B` nodes is a single `(sum N_b) x F` matrix, and
//! [`GraphBatch`] records which rows belong to which graph. Dense feature
//! transforms then run as one large matrix product per layer while the
//! graph-local operations (Chebyshev propagation, normalization, pooling)
//! walk the row segments.
//!
//! Every `forward` returns its output together with the cache its `backward`
//! consumes, so a backward pass cannot be requested without a forward pass.

mod activation;
mod chebconv;
mod dense;
mod graphnorm;
mod pool;
mod softmax;

use std::ops::Range;

use ndarray::Array2;

pub use activation::{leaky_relu, leaky_relu_backward, LEAKY_RELU_SLOPE};
pub use chebconv::{chebconv_forward, ChebConvCache, ChebConvGrads, ChebConvParams};
pub use dense::{dense_forward, DenseCache, DenseGrads, DenseParams};
pub use graphnorm::{GraphNormCache, GraphNormGrads, GraphNormParams, GRAPHNORM_EPSILON};
pub use pool::{mean_pool, mean_pool_backward};
pub use softmax::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward, BatchLoss};

use crate::error::{Error, Result};
use crate::graph::{GraphSample, LambdaMax, ScaledLaplacian};

/// Row layout and scaled Laplacians for a stack of graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    laplacians: Vec<Array2<f64>>,
    segments: Vec<Range<usize>>,
}

impl GraphBatch {
    pub fn from_samples(samples: &[&GraphSample], lambda: LambdaMax) -> Result<Self> {
        let mut laplacians = Vec::with_capacity(samples.len());
        let mut segments = Vec::with_capacity(samples.len());
        let mut offset = 0;
        for sample in samples {
            let lt = sample.scaled_laplacian(lambda)?;
            let n = lt.dim();
            laplacians.push(lt.matrix);
            segments.push(offset..offset + n);
            offset += n;
        }
        Ok(Self {
            laplacians,
            segments,
        })
    }

    pub fn from_laplacians(laplacians: impl IntoIterator<Item = ScaledLaplacian>) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let laplacians: Vec<Array2<f64>> = laplacians
            .into_iter()
            .map(|lt| {
                segments.push(offset..offset + lt.dim());
                offset += lt.dim();
                lt.matrix
            })
            .collect();
        Self {
            laplacians,
            segments,
        }
    }

    pub fn single(lt: &ScaledLaplacian) -> Self {
        Self::from_laplacians([lt.clone()])
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_nodes(&self) -> usize {
        self.segments.last().map_or(0, |r| r.end)
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&Array2<f64>, Range<usize>)> {
        self.laplacians.iter().zip(self.segments.iter().cloned())
    }

    pub(crate) fn check_rows(&self, rows: usize, what: &str) -> Result<()> {
        if rows != self.total_nodes() {
            return Err(Error::shape(format!(
                "{what} has {rows} rows but the batch holds {} nodes",
                self.total_nodes()
            )));
        }
        Ok(())
    }
}
