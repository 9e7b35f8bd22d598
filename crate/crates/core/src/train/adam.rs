use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Adam {
    /// Bias-corrected update of one tensor at step `t` (1-based).
    pub fn update(&self, t: u64, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
        let c1 = 1.0 - self.beta1.powi(t as i32);
        let c2 = 1.0 - self.beta2.powi(t as i32);
        for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// First and second moments for every tensor of a model, in the order of
/// [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One optimizer step over all tensors. Block tensors are left untouched
/// when `freeze_blocks` is set.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    adam: &Adam,
    freeze_blocks: bool,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != state.m.len() {
        return Err(Error::shape("gradient tensor count does not match optimizer state"));
    }
    for (i, (_, g)) in grad_tensors.iter().enumerate() {
        if g.len() != state.m[i].len() {
            return Err(Error::shape(format!("gradient tensor {i} has the wrong length")));
        }
    }
    state.t += 1;
    let t = state.t;
    let mut i = 0;
    params.visit_mut(|group, p| {
        if !(freeze_blocks && group == ParamGroup::Blocks) {
            adam.update(t, p, grad_tensors[i].1, &mut state.m[i], &mut state.v[i]);
        }
        i += 1;
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        let adam = Adam::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam.update(1, &mut p, &[2.0], &mut m, &mut v);
        assert!((p[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let adam = Adam::default();
        let (mut p, mut m, mut v) = ([1.5], [0.0], [0.0]);
        for t in 1..=10 {
            adam.update(t, &mut p, &[0.0], &mut m, &mut v);
        }
        assert_eq!(p[0], 1.5);
    }

    #[test]
    fn descends_a_quadratic() {
        let adam = Adam {
            learning_rate: 0.1,
            ..Adam::default()
        };
        let (mut w, mut m, mut v) = ([0.0], [0.0], [0.0]);
        for t in 1..=50 {
            let g = 2.0 * (w[0] - 3.0);
            adam.update(t, &mut w, &[g], &mut m, &mut v);
        }
        assert!((w[0] - 3.0).abs() < 0.5, "w = {}", w[0]);
    }
}
