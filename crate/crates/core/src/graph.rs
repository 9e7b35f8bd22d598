//! Per-window correlation graphs and Chebyshev filtering bases.
//!
//! Each sensor window becomes a graph whose nodes are channels. Two channels
//! are connected when their Pearson correlation reaches the threshold `psi`.
//! The normalized Laplacian of that graph is rescaled into `[-1, 1]` so the
//! Chebyshev three-term recursion `T_k = 2 L T_{k-1} - T_{k-2}` stays bounded.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::data::DatasetId;
use crate::error::{Error, Result};

/// Upper bound on the spectrum of any normalized Laplacian.
pub const NORMALIZED_LAPLACIAN_BOUND: f64 = 2.0;

const POWER_ITERATION_CAP: usize = 100_000;

/// How correlation values are compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `rho >= psi`
    #[default]
    Signed,
    /// `|rho| >= psi`
    Absolute,
}

/// Source of the `lambda_max` used to rescale a Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMax {
    /// The fixed bound 2.0, valid for every normalized Laplacian.
    #[default]
    Bound,
    /// Per-graph estimate by shifted power iteration.
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dataset: DatasetId,
    pub subject: u32,
}

/// Node features plus binary adjacency for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    /// N x F, one row per channel.
    pub node_features: Array2<f64>,
    /// N x N, symmetric, unit diagonal, entries in {0, 1}.
    pub adjacency: Array2<u8>,
    pub label: usize,
    pub meta: SampleMeta,
}

impl GraphSample {
    pub fn new(
        node_features: Array2<f64>,
        adjacency: Array2<u8>,
        label: usize,
        meta: SampleMeta,
    ) -> Result<Self> {
        let n = node_features.nrows();
        if adjacency.dim() != (n, n) {
            return Err(Error::shape(format!(
                "adjacency {:?} does not match {} nodes",
                adjacency.dim(),
                n
            )));
        }
        validate_adjacency(adjacency.view())?;
        if node_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("graph node features".into()));
        }
        Ok(Self {
            node_features,
            adjacency,
            label,
            meta,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn scaled_laplacian(&self, lambda: LambdaMax) -> Result<ScaledLaplacian> {
        let lap = normalized_laplacian(self.adjacency.view())?;
        let lambda_max = match lambda {
            LambdaMax::Bound => NORMALIZED_LAPLACIAN_BOUND,
            LambdaMax::PowerIteration => {
                let est = estimate_lambda_max(lap.view())?;
                // L == 0 (isolated nodes): any positive scale maps it to -I
                if est > 1e-12 {
                    est
                } else {
                    NORMALIZED_LAPLACIAN_BOUND
                }
            }
        };
        scale_laplacian(lap, lambda_max)
    }
}

/// `2 L / lambda_max - I`, together with the `lambda_max` that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLaplacian {
    pub matrix: Array2<f64>,
    pub lambda_max: f64,
}

impl ScaledLaplacian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn validate_adjacency(a: ArrayView2<u8>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape(format!("adjacency must be square, got {:?}", a.dim())));
    }
    for i in 0..n {
        if a[[i, i]] != 1 {
            return Err(Error::invalid(format!("adjacency diagonal entry {i} is not 1")));
        }
        for j in 0..n {
            if a[[i, j]] > 1 {
                return Err(Error::invalid(format!("adjacency entry ({i},{j}) is not binary")));
            }
            if a[[i, j]] != a[[j, i]] {
                return Err(Error::invalid(format!("adjacency is asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Pearson correlation with population statistics.
///
/// A zero-variance argument yields 0 unless both vectors are identical, in
/// which case the result is 1.
pub fn pearson(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "pearson on vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least two samples"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pearson input".into()));
    }
    if x == y {
        return Ok(1.0);
    }
    let (cx, nx) = standardize(x);
    let (cy, ny) = standardize(y);
    if nx == 0.0 || ny == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = cx.iter().zip(cy.iter()).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// Centered copy and its Euclidean norm; norm is exactly 0 for constant input.
fn standardize(x: ArrayView1<f64>) -> (Vec<f64>, f64) {
    let first = x[0];
    if x.iter().all(|&v| v == first) {
        return (vec![0.0; x.len()], 0.0);
    }
    let mean = x.sum() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    (centered, norm)
}

/// Binary adjacency from channel correlations (rows of `signals` are channels).
pub fn build_adjacency(signals: ArrayView2<f64>, psi: f64) -> Result<Array2<u8>> {
    build_adjacency_with(signals, psi, ThresholdMode::Signed)
}

pub fn build_adjacency_with(
    signals: ArrayView2<f64>,
    psi: f64,
    mode: ThresholdMode,
) -> Result<Array2<u8>> {
    let n = signals.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("correlation graph needs at least 2 channels, got {n}")));
    }
    if !(psi > -1.0 && psi < 1.0) {
        return Err(Error::invalid(format!("threshold psi = {psi} outside (-1, 1)")));
    }
    if signals.ncols() < 2 {
        return Err(Error::invalid("windows need at least two samples"));
    }
    if signals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("window signals".into()));
    }

    let rows: Vec<(Vec<f64>, f64)> = signals.outer_iter().map(standardize).collect();
    let mut adj = Array2::<u8>::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let rho = if signals.row(i) == signals.row(j) {
                1.0
            } else if rows[i].1 == 0.0 || rows[j].1 == 0.0 {
                0.0
            } else {
                let dot: f64 = rows[i].0.iter().zip(&rows[j].0).map(|(a, b)| a * b).sum();
                dot / (rows[i].1 * rows[j].1)
            };
            let score = match mode {
                ThresholdMode::Signed => rho,
                ThresholdMode::Absolute => rho.abs(),
            };
            if score >= psi {
                adj[[i, j]] = 1;
                adj[[j, i]] = 1;
            }
        }
    }
    Ok(adj)
}

pub fn degrees(a: ArrayView2<u8>) -> Vec<f64> {
    a.outer_iter()
        .map(|row| row.iter().map(|&v| v as f64).sum())
        .collect()
}

/// Combinatorial Laplacian `D - A`.
pub fn laplacian(a: ArrayView2<u8>) -> Array2<f64> {
    let d = degrees(a);
    let mut l = a.mapv(|v| -(v as f64));
    for (i, di) in d.into_iter().enumerate() {
        l[[i, i]] += di;
    }
    l
}

/// Symmetric normalized Laplacian `I - D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(a: ArrayView2<u8>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape(format!("adjacency must be square, got {:?}", a.dim())));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if a[[i, j]] != a[[j, i]] {
                return Err(Error::invalid(format!("adjacency is asymmetric at ({i},{j})")));
            }
        }
    }
    let d = degrees(a);
    if let Some(i) = d.iter().position(|&v| v == 0.0) {
        return Err(Error::invalid(format!("node {i} has zero degree")));
    }
    let inv_sqrt: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let norm_adj = a[[i, j]] as f64 * inv_sqrt[i] * inv_sqrt[j];
            l[[i, j]] = if i == j { 1.0 - norm_adj } else { -norm_adj };
        }
    }
    Ok(l)
}

/// Largest eigenvalue of a symmetric matrix by power iteration on `L + cI`,
/// where `c` is the Gershgorin radius so the shifted matrix is PSD.
pub fn estimate_lambda_max(l: ArrayView2<f64>) -> Result<f64> {
    estimate_lambda_max_capped(l, POWER_ITERATION_CAP)
}

pub fn estimate_lambda_max_capped(l: ArrayView2<f64>, max_iter: usize) -> Result<f64> {
    let n = l.nrows();
    if l.ncols() != n || n == 0 {
        return Err(Error::shape(format!("expected a non-empty square matrix, got {:?}", l.dim())));
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("laplacian".into()));
    }
    let shift = l
        .outer_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if shift == 0.0 {
        return Ok(0.0);
    }
    let mut m = l.to_owned();
    for i in 0..n {
        m[[i, i]] += shift;
    }

    // fixed irregular start vector keeps the estimate deterministic
    let mut v: ndarray::Array1<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract())
        .collect();
    let norm = v.dot(&v).sqrt();
    v /= norm;

    let mut prev = f64::NAN;
    let mut stable = 0;
    for _ in 0..max_iter {
        let w = m.dot(&v);
        let rayleigh = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return Ok(-shift);
        }
        v = w / wn;
        if (rayleigh - prev).abs() <= 1e-15 * rayleigh.abs().max(1.0) {
            stable += 1;
            if stable >= 3 {
                return Ok(rayleigh - shift);
            }
        } else {
            stable = 0;
        }
        prev = rayleigh;
    }
    Err(Error::NoConvergence(max_iter))
}

/// `(2 / lambda_max) L - I`.
pub fn scale_laplacian(l: Array2<f64>, lambda_max: f64) -> Result<ScaledLaplacian> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::invalid(format!("lambda_max must be positive, got {lambda_max}")));
    }
    if l.nrows() != l.ncols() {
        return Err(Error::shape(format!("laplacian must be square, got {:?}", l.dim())));
    }
    let mut matrix = l * (2.0 / lambda_max);
    for i in 0..matrix.nrows() {
        matrix[[i, i]] -= 1.0;
    }
    Ok(ScaledLaplacian { matrix, lambda_max })
}

/// `[T_0(L)X, ..., T_{K-1}(L)X]` by the three-term recursion.
pub fn cheb_basis(lt: &ScaledLaplacian, x: ArrayView2<f64>, k: usize) -> Result<Vec<Array2<f64>>> {
    if k < 1 {
        return Err(Error::invalid("Chebyshev order K must be at least 1"));
    }
    if x.nrows() != lt.dim() {
        return Err(Error::shape(format!(
            "features have {} rows but the Laplacian is {}x{}",
            x.nrows(),
            lt.dim(),
            lt.dim()
        )));
    }
    let f = x.ncols();
    let mut stacked = Array2::<f64>::zeros((x.nrows(), k * f));
    cheb_basis_into(lt.matrix.view(), x, k, stacked.view_mut());
    Ok((0..k)
        .map(|i| stacked.slice(s![.., i * f..(i + 1) * f]).to_owned())
        .collect())
}

/// Writes the basis side by side into `out` (N x K*F).
pub(crate) fn cheb_basis_into(
    lt: ArrayView2<f64>,
    x: ArrayView2<f64>,
    k: usize,
    mut out: ArrayViewMut2<f64>,
) {
    let f = x.ncols();
    out.slice_mut(s![.., 0..f]).assign(&x);
    if k == 1 {
        return;
    }
    let t1 = lt.dot(&x);
    out.slice_mut(s![.., f..2 * f]).assign(&t1);
    for order in 2..k {
        let prev = out.slice(s![.., (order - 1) * f..order * f]).to_owned();
        let mut next = lt.dot(&prev) * 2.0;
        next -= &out.slice(s![.., (order - 2) * f..(order - 1) * f]);
        out.slice_mut(s![.., order * f..(order + 1) * f]).assign(&next);
    }
}

/// Reverse of [`cheb_basis_into`]: given dLoss/dT_k(L)X side by side,
/// returns dLoss/dX. Uses the symmetry of `lt`.
pub(crate) fn cheb_basis_adjoint(lt: ArrayView2<f64>, grad: ArrayView2<f64>, k: usize) -> Array2<f64> {
    let f = grad.ncols() / k;
    let mut adj: Vec<Array2<f64>> = (0..k)
        .map(|i| grad.slice(s![.., i * f..(i + 1) * f]).to_owned())
        .collect();
    for order in (2..k).rev() {
        let carried = lt.dot(&adj[order]) * 2.0;
        adj[order - 1] += &carried;
        let back = adj[order].clone();
        adj[order - 2] -= &back;
    }
    if k >= 2 {
        let carried = lt.dot(&adj[1]);
        adj[0] += &carried;
    }
    adj.swap_remove(0)
}
