use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use super::GraphBatch;
use crate::error::{Error, Result};
use crate::graph::{cheb_basis_adjoint, cheb_basis_into};

/// One `F_in x F_out` feature transform per Chebyshev order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebConvParams {
    /// K x F_in x F_out
    pub theta: Array3<f64>,
}

impl ChebConvParams {
    pub fn zeros(k: usize, in_features: usize, out_features: usize) -> Self {
        Self {
            theta: Array3::zeros((k, in_features, out_features)),
        }
    }

    pub fn order(&self) -> usize {
        self.theta.dim().0
    }

    pub fn in_features(&self) -> usize {
        self.theta.dim().1
    }

    pub fn out_features(&self) -> usize {
        self.theta.dim().2
    }

    /// Theta viewed as a `(K * F_in) x F_out` matrix matching the side-by-side basis layout.
    fn stacked(&self) -> ArrayView2<'_, f64> {
        let (k, fin, fout) = self.theta.dim();
        self.theta
            .view()
            .into_shape_with_order((k * fin, fout))
            .expect("theta is contiguous")
    }

    pub fn forward(&self, graphs: &GraphBatch, x: ArrayView2<f64>) -> Result<(Array2<f64>, ChebConvCache)> {
        graphs.check_rows(x.nrows(), "chebconv input")?;
        if x.ncols() != self.in_features() {
            return Err(Error::shape(format!(
                "chebconv expects {} input features, got {}",
                self.in_features(),
                x.ncols()
            )));
        }
        let k = self.order();
        let fin = self.in_features();
        let mut basis = Array2::<f64>::zeros((x.nrows(), k * fin));
        for (lt, rows) in graphs.iter() {
            cheb_basis_into(
                lt.view(),
                x.slice(s![rows.clone(), ..]),
                k,
                basis.slice_mut(s![rows, ..]),
            );
        }
        let out = basis.dot(&self.stacked());
        Ok((out, ChebConvCache { basis }))
    }

    pub fn backward(
        &self,
        graphs: &GraphBatch,
        cache: &ChebConvCache,
        upstream: ArrayView2<f64>,
    ) -> Result<ChebConvGrads> {
        if upstream.dim() != (cache.basis.nrows(), self.out_features()) {
            return Err(Error::shape(format!(
                "chebconv upstream gradient {:?} does not match output ({}, {})",
                upstream.dim(),
                cache.basis.nrows(),
                self.out_features()
            )));
        }
        let (k, fin, _) = self.theta.dim();
        let theta = self.backward_params(cache, upstream);
        let grad_basis = upstream.dot(&self.stacked().t());
        let mut input = Array2::<f64>::zeros((upstream.nrows(), fin));
        for (lt, rows) in graphs.iter() {
            let g = cheb_basis_adjoint(lt.view(), grad_basis.slice(s![rows.clone(), ..]), k);
            input.slice_mut(s![rows, ..]).assign(&g);
        }
        Ok(ChebConvGrads { theta, input })
    }

    /// Theta gradient only; skips propagating into the layer input.
    pub(crate) fn backward_params(&self, cache: &ChebConvCache, upstream: ArrayView2<f64>) -> Array3<f64> {
        let (k, fin, fout) = self.theta.dim();
        cache
            .basis
            .t()
            .dot(&upstream)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((k, fin, fout))
            .expect("contiguous product")
    }
}

#[derive(Debug, Clone)]
pub struct ChebConvCache {
    /// `[T_0 X | T_1 X | ...]`, rows stacked over the batch.
    basis: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebConvGrads {
    pub theta: Array3<f64>,
    pub input: Array2<f64>,
}

/// `sum_k basis[k] . theta_k` for a basis computed by [`crate::graph::cheb_basis`].
pub fn chebconv_forward(basis: &[Array2<f64>], params: &ChebConvParams) -> Result<Array2<f64>> {
    if basis.len() != params.order() {
        return Err(Error::shape(format!(
            "basis has {} orders, parameters expect {}",
            basis.len(),
            params.order()
        )));
    }
    let rows = basis[0].nrows();
    let mut out = Array2::<f64>::zeros((rows, params.out_features()));
    for (term, theta) in basis.iter().zip(params.theta.axis_iter(Axis(0))) {
        if term.dim() != (rows, params.in_features()) {
            return Err(Error::shape(format!(
                "basis term {:?} does not match ({rows}, {})",
                term.dim(),
                params.in_features()
            )));
        }
        out += &term.dot(&theta);
    }
    Ok(out)
}
