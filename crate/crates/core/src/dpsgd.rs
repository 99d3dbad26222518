//! DP-SGD: Poisson-subsampled groups, per-example clipping, Gaussian noise
//! on the clipped sum, plain gradient descent, and RDP accounting.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::accountant::{self, DpGuarantee, Mechanism, RdpCurve};
use crate::error::{Error, Result};
use crate::gaf::EncodedSet;
use crate::nn::{self, init_params, Architecture, ModelParams};
use crate::par::Exec;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpSgdConfig {
    /// Expected group size L; the sampling rate is q = L/N.
    pub group_size: usize,
    /// Noise multiplier σ; the noise std on the clipped sum is σC.
    pub noise_multiplier: f64,
    /// Per-example L2 bound C. `f64::INFINITY` disables clipping.
    pub clip_bound: f64,
    pub learning_rate: f64,
    /// One epoch is ⌈N/L⌉ steps.
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<u64>,
    pub delta: f64,
    pub seed: u64,
    /// Test accuracy is recorded every `eval_every` epochs and at the end.
    pub eval_every: usize,
}

impl Default for DpSgdConfig {
    fn default() -> Self {
        DpSgdConfig {
            group_size: 50,
            noise_multiplier: 1.0,
            clip_bound: 1.5,
            learning_rate: 0.1,
            epochs: 120,
            steps: None,
            delta: 1e-5,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl DpSgdConfig {
    pub fn validate(&self, dataset_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.group_size == 0 || self.group_size > dataset_size {
            return bad(format!(
                "group size L = {} must lie in [1, N = {dataset_size}]",
                self.group_size
            ));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return bad(format!("noise multiplier must be ≥ 0, got {}", self.noise_multiplier));
        }
        if !(self.clip_bound > 0.0) {
            return bad(format!("clip bound must be positive, got {}", self.clip_bound));
        }
        if self.clip_bound.is_infinite() && self.noise_multiplier > 0.0 {
            return bad("noise needs a finite clip bound".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, dataset_size: usize) -> u64 {
        dataset_size.div_ceil(self.group_size.max(1)) as u64
    }

    pub fn total_steps(&self, dataset_size: usize) -> u64 {
        self.steps
            .unwrap_or(self.epochs as u64 * self.steps_per_epoch(dataset_size))
    }

    pub fn sampling_rate(&self, dataset_size: usize) -> f64 {
        self.group_size as f64 / dataset_size as f64
    }
}

/// Includes each of `0..n` independently with probability `l / n`.
pub fn poisson_sample(n: usize, l: usize, rng: &mut Rng) -> Vec<usize> {
    let q = l as f64 / n as f64;
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `g` in place by `1 / max(1, ‖g‖₂ / C)`.
pub fn clip_in_place(g: &mut [f64], clip: f64) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let factor = (l2_norm(g) / clip).max(1.0);
    if factor > 1.0 {
        g.iter_mut().for_each(|v| *v /= factor);
    }
    debug_assert!(l2_norm(g) <= clip * (1.0 + 1e-12));
    Ok(())
}

/// `g / max(1, ‖g‖₂ / C)`.
pub fn clip_gradient(g: &[f64], clip: f64) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, clip)?;
    Ok(out)
}

/// `(Σ clipped + z) / L` with `z ~ N(0, σ²C²)` per coordinate. The divisor is
/// the configured group size whatever the realized sample size was.
pub fn noisy_mean(
    clipped_sum: &[f64],
    sigma: f64,
    clip: f64,
    group_size: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    let l = group_size as f64;
    if sigma == 0.0 {
        return clipped_sum.iter().map(|s| s / l).collect();
    }
    let std = sigma * clip;
    clipped_sum
        .iter()
        .map(|s| (s + std * rng::standard_normal(rng)) / l)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Mean loss over the sampled group before the update; `None` when the
    /// draw was empty.
    pub loss: Option<f64>,
    /// Epoch the step belongs to, starting at 1.
    pub epoch: u64,
    /// Set on the last step of an evaluated epoch.
    pub test_accuracy: Option<f64>,
    pub epsilon_so_far: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRunRecord {
    pub steps: Vec<StepRecord>,
    pub sampling_rate: f64,
    pub step_count: u64,
    pub guarantee: DpGuarantee,
    pub final_accuracy: Option<f64>,
}

/// Guarantee after `steps` noisy steps, from a single-step curve.
fn guarantee_after(step_curve: Option<&RdpCurve>, steps: u64, delta: f64) -> Result<DpGuarantee> {
    match step_curve {
        _ if steps == 0 => Ok(DpGuarantee {
            epsilon: 0.0,
            delta,
            alpha: f64::INFINITY,
        }),
        None => Ok(DpGuarantee {
            epsilon: f64::INFINITY,
            delta,
            alpha: f64::INFINITY,
        }),
        Some(c) => {
            let scaled = RdpCurve::new(
                c.orders().to_vec(),
                c.values().iter().map(|v| v * steps as f64).collect(),
            )?;
            accountant::to_dp(&scaled, delta)
        }
    }
}

/// Runs DP-SGD from `init_params(config.seed)`.
///
/// With σ = 0 no noise is added and the reported ε is infinite; with zero
/// steps nothing is released and ε = 0.
pub fn dp_sgd_train(
    train: &EncodedSet,
    test: Option<&EncodedSet>,
    config: &DpSgdConfig,
    exec: Exec,
) -> Result<(ModelParams, TrainingRunRecord)> {
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptySplit);
    }
    config.validate(n)?;
    let arch = Architecture::with_window(train.window());
    let mut params = init_params(arch, config.seed);
    let q = config.sampling_rate(n);
    let total = config.total_steps(n);
    let per_epoch = config.steps_per_epoch(n);
    let step_curve = if config.noise_multiplier > 0.0 {
        Some(
            Mechanism::SubsampledGaussian {
                q,
                sigma: config.noise_multiplier,
            }
            .curve(&accountant::default_orders())?,
        )
    } else {
        None
    };

    let mut sampler = rng::stream(config.seed, "poisson", 0);
    let mut noise = rng::stream(config.seed, "noise", 0);
    let clip = config.clip_bound;
    let mut steps = Vec::with_capacity(total as usize);
    let mut final_accuracy = None;
    for t in 1..=total {
        let group = poisson_sample(n, config.group_size, &mut sampler);
        let (loss, sum) = if group.is_empty() {
            (None, vec![0.0; params.len()])
        } else {
            let xs: Vec<&[f64]> = group.iter().map(|&i| train.input(i)).collect();
            let ys: Vec<usize> = group.iter().map(|&i| train.label(i).index()).collect();
            let (loss_sum, sum) =
                nn::per_example_sum(&params, &xs, &ys, exec, |g| clip_in_place(g, clip))?;
            (Some(loss_sum / group.len() as f64), sum)
        };
        // The noisy update is applied even for an empty draw so that the
        // released parameters always carry the accounted noise.
        let update = noisy_mean(&sum, config.noise_multiplier, clip, config.group_size, &mut noise);
        for (p, u) in params.flat_mut().iter_mut().zip(&update) {
            *p -= config.learning_rate * u;
        }

        let epoch = (t - 1) / per_epoch + 1;
        let epoch_end = t % per_epoch == 0 || t == total;
        let test_accuracy = match test {
            Some(set)
                if epoch_end && (epoch % config.eval_every.max(1) as u64 == 0 || t == total) =>
            {
                Some(nn::evaluate(&params, set, exec)?)
            }
            _ => None,
        };
        if test_accuracy.is_some() {
            final_accuracy = test_accuracy;
        }
        steps.push(StepRecord {
            step: t,
            loss,
            epoch,
            test_accuracy,
            epsilon_so_far: guarantee_after(step_curve.as_ref(), t, config.delta)?.epsilon,
        });
    }
    let guarantee = guarantee_after(step_curve.as_ref(), total, config.delta)?;
    if total == 0 {
        if let Some(set) = test {
            final_accuracy = Some(nn::evaluate(&params, set, exec)?);
        }
    }
    Ok((
        params,
        TrainingRunRecord {
            steps,
            sampling_rate: q,
            step_count: total,
            guarantee,
            final_accuracy,
        },
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the per-step record as CSV:
/// `step,loss,epoch,test_accuracy,epsilon_so_far` (empty cells when absent).
pub fn write_run_csv(path: impl AsRef<Path>, record: &TrainingRunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss", "epoch", "test_accuracy", "epsilon_so_far"])?;
    for s in &record.steps {
        w.write_record([
            s.step.to_string(),
            opt(s.loss),
            s.epoch.to_string(),
            opt(s.test_accuracy),
            s.epsilon_so_far.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Echoes the run configuration and outcome next to the curve file.
pub fn write_sidecar(
    path: impl AsRef<Path>,
    config: &DpSgdConfig,
    dataset_size: usize,
    record: &TrainingRunRecord,
) -> Result<()> {
    let body = toml::to_string(config).map_err(|e| Error::Format(e.to_string()))?;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# DP-SGD run")?;
    write!(f, "{body}")?;
    writeln!(f, "dataset_size = {dataset_size}")?;
    writeln!(f, "sampling_rate = {}", record.sampling_rate)?;
    writeln!(f, "step_count = {}", record.step_count)?;
    writeln!(f, "# {}", record.guarantee)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        assert_eq!(clip_gradient(&[3.0, 4.0], 1.0).unwrap(), vec![0.6, 0.8]);
        assert_eq!(clip_gradient(&[0.3, 0.4], 1.0).unwrap(), vec![0.3, 0.4]);
        assert_eq!(clip_gradient(&[0.0; 3], 1.0).unwrap(), vec![0.0; 3]);
        assert_eq!(clip_gradient(&[1e300, 1.0], f64::INFINITY).unwrap(), vec![1e300, 1.0]);
        assert!(matches!(
            clip_gradient(&[f64::NAN], 1.0),
            Err(Error::NonFiniteGradient)
        ));
    }

    #[test]
    fn full_rate_samples_everything() {
        let mut r = rng::seeded(1);
        assert_eq!(poisson_sample(50, 50, &mut r), (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn zero_noise_mean_is_exact() {
        let mut r = rng::seeded(1);
        assert_eq!(noisy_mean(&[2.0, 4.0], 0.0, 1.0, 4, &mut r), vec![0.5, 1.0]);
    }

    #[test]
    fn validation() {
        let c = DpSgdConfig::default();
        assert!(c.validate(2400).is_ok());
        assert!(c.validate(49).is_err());
        let inf = DpSgdConfig {
            clip_bound: f64::INFINITY,
            ..c.clone()
        };
        assert!(inf.validate(2400).is_err());
        assert_eq!(c.steps_per_epoch(2400), 48);
        assert_eq!(c.total_steps(2400), 5760);
    }
}
