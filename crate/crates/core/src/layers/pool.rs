use ndarray::{s, Array2, ArrayView2, Axis};

use super::GraphBatch;
use crate::error::Result;

/// Mean over the nodes of each graph: `(sum N_b) x F -> B x F`.
pub fn mean_pool(graphs: &GraphBatch, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    graphs.check_rows(x.nrows(), "pool input")?;
    let mut out = Array2::<f64>::zeros((graphs.len(), x.ncols()));
    for (gi, rows) in graphs.segments().iter().enumerate() {
        let seg = x.slice(s![rows.clone(), ..]);
        out.row_mut(gi).assign(&(seg.sum_axis(Axis(0)) / seg.nrows() as f64));
    }
    Ok(out)
}

pub fn mean_pool_backward(graphs: &GraphBatch, upstream: ArrayView2<f64>) -> Array2<f64> {
    let mut grad = Array2::<f64>::zeros((graphs.total_nodes(), upstream.ncols()));
    for (gi, rows) in graphs.segments().iter().enumerate() {
        let share = &upstream.row(gi) / rows.len() as f64;
        for mut row in grad.slice_mut(s![rows.clone(), ..]).outer_iter_mut() {
            row.assign(&share);
        }
    }
    grad
}
