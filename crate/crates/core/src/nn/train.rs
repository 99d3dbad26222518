//! Minibatch SGD with momentum, evaluation and prediction.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, batch_gradient, init_params, logits_of, Architecture, ModelParams};
use crate::error::{Error, Result};
use crate::gaf::EncodedSet;
use crate::par::Exec;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.006,
            momentum: 0.9,
            batch_size: 100,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::ConfigInvalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `v ← momentum·v + g`, then `θ ← θ − η·v`.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    grad: &[f64],
    velocity: &mut [f64],
    config: &TrainConfig,
) -> Result<()> {
    let n = params.len();
    for len in [grad.len(), velocity.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    for ((t, v), g) in params.flat_mut().iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = config.momentum * *v + g;
        *t -= config.learning_rate * *v;
    }
    Ok(())
}

/// Periodic evaluation during training.
#[derive(Clone, Copy, Debug)]
pub struct EvalPlan<'a> {
    pub set: &'a EncodedSet,
    /// Evaluate after every `every`-th epoch and after the last one.
    pub every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean minibatch loss before each update.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochStats>,
}

/// Trains the baseline CNN from `init_params(config.seed)`.
pub fn train_baseline(
    train: &EncodedSet,
    config: &TrainConfig,
    eval: Option<EvalPlan<'_>>,
    exec: Exec,
) -> Result<(ModelParams, TrainHistory)> {
    let arch = Architecture::with_window(train.window());
    train_from(init_params(arch, config.seed), train, config, eval, exec)
}

/// Trains starting from given parameters. Each epoch visits a fresh
/// permutation of the training set in minibatches; the last batch may be
/// short.
pub fn train_from(
    mut params: ModelParams,
    train: &EncodedSet,
    config: &TrainConfig,
    eval: Option<EvalPlan<'_>>,
    exec: Exec,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    if params.arch().input_len() != train.sample_len() {
        return Err(Error::ShapeMismatch {
            expected: format!("inputs of {} values", params.arch().input_len()),
            actual: format!("inputs of {} values", train.sample_len()),
        });
    }
    let mut rng = rng::stream(config.seed, "shuffle", 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut velocity = vec![0.0; params.len()];
    let mut history = TrainHistory::default();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train.input(i)).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| train.label(i).index()).collect();
            let (loss, grad) = batch_gradient(&params, &xs, &ys, exec);
            sgd_momentum_step(&mut params, &grad, &mut velocity, config)?;
            history.step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
        }
        let accuracy = match eval {
            Some(plan) if epoch % plan.every.max(1) == 0 || epoch == config.epochs => {
                Some(evaluate(&params, plan.set, exec)?)
            }
            _ => None,
        };
        history.epochs.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / batches as f64,
            accuracy,
        });
    }
    Ok((params, history))
}

/// Predicted class index per example (argmax, lowest index on ties).
pub fn predict(params: &ModelParams, set: &EncodedSet, exec: Exec) -> Vec<usize> {
    let xs: Vec<&[f64]> = (0..set.len()).map(|i| set.input(i)).collect();
    let k = params.arch().classes;
    logits_of(params, &xs, exec).chunks(k).map(argmax).collect()
}

/// Fraction of examples whose predicted class equals the label.
pub fn evaluate(params: &ModelParams, set: &EncodedSet, exec: Exec) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySplit);
    }
    let hits = predict(params, set, exec)
        .iter()
        .zip(set.labels())
        .filter(|(p, l)| **p == l.index())
        .count();
    Ok(hits as f64 / set.len() as f64)
}
