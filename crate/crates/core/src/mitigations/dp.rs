use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrunkGradient;

/// Record-level DP-SGD parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpPolicy {
    pub clip_norm: f64,
    /// Noise multiplier; per-coordinate noise std is `sigma * clip_norm / batch`.
    pub sigma: f64,
    pub delta: f64,
    /// Batch sampling rate `batch / dataset size`, for accounting.
    pub sample_rate: f64,
    /// Number of noisy steps, for accounting.
    pub steps: u64,
}

impl Default for DpPolicy {
    fn default() -> Self {
        Self { clip_norm: 2.5, sigma: 0.0, delta: 1.0 / 295_750.0, sample_rate: 0.01, steps: 1000 }
    }
}

impl DpPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip norm must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!("sigma {} must be finite and non-negative", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta must lie in (0, 1)"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::config("sampling rate must lie in (0, 1]"));
        }
        if self.steps == 0 {
            return Err(Error::config("step count must be at least 1"));
        }
        Ok(())
    }

    fn noise_std(&self, batch: usize) -> f64 {
        self.sigma * self.clip_norm / batch as f64
    }
}

/// Scales `g` by `min(1, c / ||g||_2)`.
pub fn clip_to_norm(g: &[f64], c: f64) -> Vec<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = if norm > c { c / norm } else { 1.0 };
    g.iter().map(|v| v * s).collect()
}

/// Mean of per-sample gradients clipped to `clip_norm`, plus Gaussian noise.
pub fn dp_perturb<R: Rng + ?Sized>(per_sample: &[Vec<f64>], policy: &DpPolicy, rng: &mut R) -> Result<Vec<f64>> {
    if policy.sigma < 0.0 {
        return Err(Error::config("sigma must be non-negative"));
    }
    let first = per_sample.first().ok_or_else(|| Error::dimension("no per-sample gradients"))?;
    let d = first.len();
    let b = per_sample.len() as f64;
    let mut mean = vec![0.0; d];
    for g in per_sample {
        if g.len() != d {
            return Err(Error::dimension("per-sample gradients differ in length"));
        }
        for (m, v) in mean.iter_mut().zip(clip_to_norm(g, policy.clip_norm)) {
            *m += v / b;
        }
    }
    if policy.sigma > 0.0 {
        let normal = Normal::new(0.0, policy.noise_std(per_sample.len())).expect("finite std");
        mean.iter_mut().for_each(|m| *m += normal.sample(rng));
    }
    Ok(mean)
}

/// [`dp_perturb`] over row-sparse trunk gradients. With `sigma > 0` every
/// coordinate receives noise and the result is dense.
pub fn dp_perturb_sparse<R: Rng + ?Sized>(
    per_sample: &[TrunkGradient],
    policy: &DpPolicy,
    rng: &mut R,
) -> Result<TrunkGradient> {
    if policy.sigma < 0.0 {
        return Err(Error::config("sigma must be non-negative"));
    }
    let first = per_sample.first().ok_or_else(|| Error::dimension("no per-sample gradients"))?;
    let b = per_sample.len() as f64;
    let clipped: Vec<TrunkGradient> = per_sample
        .iter()
        .map(|g| {
            let mut g = g.clone();
            let norm = g.l2_norm();
            if norm > policy.clip_norm {
                g.scale(policy.clip_norm / norm);
            }
            g.scale(1.0 / b);
            g
        })
        .collect();
    let mean = TrunkGradient::sum(&clipped)?;
    if policy.sigma == 0.0 {
        return Ok(mean);
    }
    let normal = Normal::new(0.0, policy.noise_std(per_sample.len())).expect("finite std");
    let mut dense = mean.to_dense();
    dense.iter_mut().for_each(|m| *m += normal.sample(rng));
    TrunkGradient::from_dense(first.input_dim(), first.hidden(), &dense)
}
