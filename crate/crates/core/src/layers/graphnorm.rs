use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::GraphBatch;
use crate::error::{Error, Result};

pub const GRAPHNORM_EPSILON: f64 = 1e-5;

/// Per-graph, per-feature normalization over nodes:
/// `gamma * (x - alpha * mean) / sqrt(var + eps) + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNormParams {
    pub alpha: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub epsilon: f64,
}

impl GraphNormParams {
    pub fn new(features: usize) -> Self {
        Self {
            alpha: Array1::ones(features),
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            epsilon: GRAPHNORM_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.alpha.len()
    }

    fn check(&self, cols: usize) -> Result<()> {
        let f = self.features();
        if self.gamma.len() != f || self.beta.len() != f {
            return Err(Error::shape("graphnorm alpha/gamma/beta lengths differ"));
        }
        if cols != f {
            return Err(Error::shape(format!("graphnorm expects {f} features, got {cols}")));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("graphnorm epsilon must be positive"));
        }
        Ok(())
    }

    pub fn forward(&self, graphs: &GraphBatch, x: ArrayView2<f64>) -> Result<(Array2<f64>, GraphNormCache)> {
        graphs.check_rows(x.nrows(), "graphnorm input")?;
        self.check(x.ncols())?;
        let g = graphs.len();
        let f = self.features();
        let mut means = Array2::<f64>::zeros((g, f));
        let mut inv_std = Array2::<f64>::zeros((g, f));
        let mut normalized = Array2::<f64>::zeros(x.raw_dim());
        for (gi, rows) in graphs.segments().iter().enumerate() {
            let seg = x.slice(s![rows.clone(), ..]);
            let n = seg.nrows() as f64;
            let mean = seg.sum_axis(Axis(0)) / n;
            let centered = &seg - &(&mean * &self.alpha);
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
            let istd = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
            normalized.slice_mut(s![rows.clone(), ..]).assign(&(&centered * &istd));
            means.row_mut(gi).assign(&mean);
            inv_std.row_mut(gi).assign(&istd);
        }
        let out = &normalized * &self.gamma + &self.beta;
        Ok((
            out,
            GraphNormCache {
                means,
                inv_std,
                normalized,
            },
        ))
    }

    pub fn backward(
        &self,
        graphs: &GraphBatch,
        cache: &GraphNormCache,
        upstream: ArrayView2<f64>,
    ) -> Result<GraphNormGrads> {
        if upstream.dim() != cache.normalized.dim() {
            return Err(Error::shape(format!(
                "graphnorm upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                cache.normalized.dim()
            )));
        }
        let f = self.features();
        let beta = upstream.sum_axis(Axis(0));
        let gamma = (&upstream * &cache.normalized).sum_axis(Axis(0));
        let mut alpha = Array1::<f64>::zeros(f);
        let mut input = Array2::<f64>::zeros(upstream.raw_dim());
        for (gi, rows) in graphs.segments().iter().enumerate() {
            let up = upstream.slice(s![rows.clone(), ..]);
            let norm = cache.normalized.slice(s![rows.clone(), ..]);
            let istd = cache.inv_std.row(gi);
            let mean = cache.means.row(gi);
            let n = up.nrows() as f64;

            // d normalized
            let dn = &up * &self.gamma;
            // centered = normalized / istd, so d centered =
            //   istd * (dn - normalized * mean(dn * normalized))
            let proj = (&dn * &norm).sum_axis(Axis(0)) / n;
            let dc = (&dn - &norm * &proj) * istd;
            let dc_sum = dc.sum_axis(Axis(0));
            alpha -= &(&dc_sum * &mean);
            let dx = &dc - &(&(&dc_sum * &self.alpha) / n);
            input.slice_mut(s![rows.clone(), ..]).assign(&dx);
        }
        Ok(GraphNormGrads {
            alpha,
            gamma,
            beta,
            input,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GraphNormCache {
    means: Array2<f64>,
    inv_std: Array2<f64>,
    normalized: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNormGrads {
    pub alpha: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub input: Array2<f64>,
}
