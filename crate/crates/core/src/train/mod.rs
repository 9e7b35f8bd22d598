//! Mini-batch training with Adam, freeze masks, data splits and learning
//! curves.

mod adam;
mod split;

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamState};
pub use split::{fewshot_split, kfold_split};

use crate::error::{Error, Result};
use crate::graph::GraphSample;
use crate::model::ModelParams;

const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub folds: usize,
    pub correlation_threshold: f64,
    pub window_length: usize,
    pub overlap_fraction: f64,
    pub seed: u64,
    pub freeze_blocks: bool,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Minimum epoch-over-epoch decrease of the mean loss that counts as progress.
    pub convergence_tolerance: f64,
    /// Epochs without progress before training stops.
    pub convergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 120,
            folds: 5,
            correlation_threshold: 0.2,
            window_length: 128,
            overlap_fraction: 0.5,
            seed: 0,
            freeze_blocks: false,
            train_fraction: 0.05,
            test_fraction: 0.8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            convergence_tolerance: 1e-5,
            convergence_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 1.0) {
            return bad("overlap_fraction must lie in (0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.test_fraction >= 0.0)
            || self.train_fraction + self.test_fraction > 1.0 + 1e-12
        {
            return bad("train_fraction + test_fraction must not exceed 1");
        }
        if !(self.correlation_threshold > -1.0 && self.correlation_threshold < 1.0) {
            return bad("correlation_threshold must lie in (-1, 1)");
        }
        if self.window_length < 2 {
            return bad("window_length must be at least 2");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_epsilon <= 0.0
        {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam {
        Adam {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// Window step in samples: `window_length * (1 - overlap_fraction)`.
    pub fn window_step(&self) -> usize {
        ((self.window_length as f64 * (1.0 - self.overlap_fraction)).round() as usize).max(1)
    }
}

/// Per-epoch training loss and, when an evaluation set is given, test
/// accuracy in percent. Epoch `e` is measured after the `e`-th pass over the
/// training data (zero-based).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub train_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    /// Accuracy of the untrained model on the evaluation set.
    pub initial_test_accuracy: Option<f64>,
}

impl LearningCurve {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// `epoch,train_loss,test_accuracy`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_accuracy\n");
        for (e, loss) in self.train_loss.iter().enumerate() {
            let acc = self.test_accuracy.get(e).map(|a| format!("{a:.4}")).unwrap_or_default();
            writeln!(out, "{e},{loss:.8},{acc}").expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Class predictions in batches of `batch_size`.
pub fn predict(params: &ModelParams, samples: &[&GraphSample], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        out.extend(params.forward_batch(chunk)?.predictions());
    }
    Ok(out)
}

/// Percentage of correctly classified samples.
pub fn accuracy(params: &ModelParams, samples: &[&GraphSample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample set"));
    }
    let predicted = predict(params, samples, batch_size)?;
    let correct = predicted.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(100.0 * correct as f64 / samples.len() as f64)
}

/// Trains on `data` with the defaults of [`train_with`].
pub fn train(model: ModelParams, data: &[GraphSample], config: &TrainConfig) -> Result<(ModelParams, LearningCurve)> {
    let refs: Vec<&GraphSample> = data.iter().collect();
    train_with(model, &refs, None, config, |_| ControlFlow::Continue(()))
}

/// Full training loop. Blocks are frozen when `config.freeze_blocks` is set
/// or the model carries transferred blocks. `observer` runs after every
/// epoch and may stop training early.
pub fn train_with(
    mut model: ModelParams,
    data: &[&GraphSample],
    eval: Option<&[&GraphSample]>,
    config: &TrainConfig,
    mut observer: impl FnMut(&LearningCurve) -> ControlFlow<()>,
) -> Result<(ModelParams, LearningCurve)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if let Some(s) = data.iter().find(|s| s.label >= model.num_classes()) {
        return Err(Error::invalid(format!(
            "label {} out of range for {} classes",
            s.label,
            model.num_classes()
        )));
    }
    let freeze = config.freeze_blocks || model.blocks_frozen;
    let adam = config.adam();
    let mut state = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut curve = LearningCurve::default();
    if let Some(eval) = eval.filter(|e| !e.is_empty()) {
        curve.initial_test_accuracy = Some(accuracy(&model, eval, config.batch_size)?);
    }
    let mut stalled = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<&GraphSample> = chunk.iter().map(|&i| data[i]).collect();
            let diverged = |loss| Error::Divergence { epoch, batch, loss };
            let (loss, grads) = match model.loss_and_gradients(&samples, !freeze) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            adam_step(&mut model, &grads.params, &mut state, &adam, freeze)?;
            total += loss * samples.len() as f64;
        }
        let mean = total / data.len() as f64;
        if let Some(&prev) = curve.train_loss.last() {
            if prev - mean < config.convergence_tolerance {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        curve.train_loss.push(mean);
        if let Some(eval) = eval.filter(|e| !e.is_empty()) {
            curve.test_accuracy.push(accuracy(&model, eval, config.batch_size)?);
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        if stalled >= config.convergence_patience || observer(&curve).is_break() {
            break;
        }
    }
    Ok((model, curve))
}
