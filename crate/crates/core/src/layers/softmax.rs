use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Softmax with max subtraction.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Returns `(-log p[label], p)`.
pub fn softmax_cross_entropy(logits: ArrayView1<f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let shifted = logits.mapv(|v| v - max);
    let log_sum = shifted.mapv(f64::exp).sum().ln();
    let probs = shifted.mapv(|v| (v - log_sum).exp());
    Ok((log_sum - shifted[label], probs))
}

/// Mean cross-entropy over a batch, with per-row probabilities.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub probabilities: Array2<f64>,
}

impl BatchLoss {
    pub fn compute(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Self> {
        if logits.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} logit rows for {} labels",
                logits.nrows(),
                labels.len()
            )));
        }
        let mut probabilities = Array2::<f64>::zeros(logits.raw_dim());
        let mut total = 0.0;
        for (i, (row, &label)) in logits.outer_iter().zip(labels).enumerate() {
            let (loss, p) = softmax_cross_entropy(row, label)?;
            total += loss;
            probabilities.row_mut(i).assign(&p);
        }
        Ok(Self {
            loss: total / labels.len().max(1) as f64,
            probabilities,
        })
    }
}

/// Gradient of the batch-mean loss w.r.t. logits: `(p - onehot) / B`.
pub fn softmax_cross_entropy_backward(probabilities: ArrayView2<f64>, labels: &[usize]) -> Array2<f64> {
    let b = labels.len().max(1) as f64;
    let mut grad = probabilities.to_owned();
    for (mut row, &label) in grad.outer_iter_mut().zip(labels) {
        row[label] -= 1.0;
    }
    grad / b
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn zero_logits_give_uniform_and_ln_c() {
        let (loss, p) = softmax_cross_entropy(Array1::zeros(4).view(), 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_are_stable() {
        let (loss, p) = softmax_cross_entropy(array![1000.0, 0.0].view(), 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradient_closed_form() {
        let probs = Array2::from_elem((1, 4), 0.25);
        let g = softmax_cross_entropy_backward(probs.view(), &[1]);
        assert_eq!(g.row(0).to_vec(), vec![0.25, -0.75, 0.25, 0.25]);
    }

    #[test]
    fn out_of_range_label() {
        assert!(softmax_cross_entropy(Array1::zeros(3).view(), 3).is_err());
    }
}
