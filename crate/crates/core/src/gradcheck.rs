//! Central finite-difference checks of the model's analytic gradients.

use crate::error::Result;
use crate::graph::GraphSample;
use crate::model::ModelParams;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOutcome {
    /// Largest relative error over the checked elements.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Elements whose `+-step` evaluations land on different sides of a
    /// leaky ReLU kink, where the loss is not differentiable.
    pub skipped_kinks: usize,
    /// Elements that missed the tolerance while the difference quotients at
    /// `2h`, `h` and `h/2` disagreed among themselves by at least half the
    /// tolerance, so the oracle cannot judge them.
    pub unresolved: usize,
    /// Elements that missed the tolerance against a self-consistent oracle.
    pub failures: usize,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && (self.skipped_kinks + self.unresolved) * 100 <= self.checked
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            max_relative_error: self.max_relative_error.max(other.max_relative_error),
            checked: self.checked + other.checked,
            skipped_kinks: self.skipped_kinks + other.skipped_kinks,
            unresolved: self.unresolved + other.unresolved,
            failures: self.failures + other.failures,
        }
    }
}

/// Compares every parameter gradient of the batch-mean loss against
/// `(L(p + h) - L(p - h)) / 2h`. `bias` is added to every analytic gradient
/// so that the sensitivity of the harness itself can be tested.
pub fn check_model_gradients(
    model: &ModelParams,
    samples: &[&GraphSample],
    step: f64,
    tolerance: f64,
    bias: f64,
) -> Result<GradCheckOutcome> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (_, grads) = model.loss_and_gradients(samples, true)?;
    let analytic: Vec<Vec<f64>> = grads.params.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    let mut probe = model.clone();
    let mut out = GradCheckOutcome {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        unresolved: 0,
        failures: 0,
    };
    for (ti, tensor) in analytic.iter().enumerate() {
        for (ei, &g) in tensor.iter().enumerate() {
            let g = g + bias;
            let original = probe.tensors()[ti].1[ei];
            let mut central = |h: f64| -> Result<(f64, bool)> {
                let mut at = |value: f64| -> Result<(f64, Vec<bool>)> {
                    probe.tensors_mut()[ti].1[ei] = value;
                    let trace = probe.forward_batch(samples)?;
                    Ok((trace.loss(&labels)?, trace.activation_pattern()))
                };
                let (plus, plus_pattern) = at(original + h)?;
                let (minus, minus_pattern) = at(original - h)?;
                probe.tensors_mut()[ti].1[ei] = original;
                Ok(((plus - minus) / (2.0 * h), plus_pattern == minus_pattern))
            };
            let (fd, smooth) = central(step)?;
            if !smooth {
                out.skipped_kinks += 1;
                continue;
            }
            let err = relative_error(g, fd);
            if err >= tolerance {
                let (wide, _) = central(2.0 * step)?;
                let (narrow, _) = central(0.5 * step)?;
                let spread = relative_error(wide, narrow)
                    .max(relative_error(fd, wide))
                    .max(relative_error(fd, narrow));
                if spread >= 0.5 * tolerance {
                    out.unresolved += 1;
                    continue;
                }
                out.failures += 1;
            }
            out.max_relative_error = out.max_relative_error.max(err);
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn outcome_merge_and_verdict() {
        let a = GradCheckOutcome {
            max_relative_error: 1e-6,
            checked: 200,
            skipped_kinks: 1,
            unresolved: 0,
            failures: 0,
        };
        assert!(a.passed());
        let b = GradCheckOutcome { max_relative_error: 1e-3, failures: 1, ..a };
        let m = a.merge(b);
        assert_eq!((m.checked, m.skipped_kinks, m.failures), (400, 2, 1));
        assert_eq!(m.max_relative_error, 1e-3);
        assert!(!m.passed());
        let kinky = GradCheckOutcome { skipped_kinks: 5, ..a };
        assert!(!kinky.passed());
    }
}
