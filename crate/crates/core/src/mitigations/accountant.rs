//! Rényi-DP accountant for the Poisson-subsampled Gaussian mechanism.
//!
//! RDP at integer order `a` is `log A_a / (a - 1)` with
//! `A_a = sum_k C(a, k) (1-q)^(a-k) q^k exp(k(k-1) / (2 sigma^2))`; `T`-fold
//! composition multiplies it by `T`. Conversion to `(eps, delta)` minimizes
//! `T*rdp + log((a-1)/a) - (log delta + log a) / (a - 1)` over orders.

use crate::error::{Error, Result};

use super::DpPolicy;

/// Integer orders searched by the accountant.
pub fn default_orders() -> Vec<u32> {
    (2..=256).chain([320, 384, 512, 768, 1024]).collect()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn ln_factorials(max: usize) -> Vec<f64> {
    let mut t = vec![0.0; max + 1];
    for k in 1..=max {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

/// RDP of one step of the sampled Gaussian mechanism at integer order `alpha`.
pub fn rdp_sampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q == 0.0 {
        return 0.0;
    }
    let a = alpha as usize;
    let lf = ln_factorials(a);
    let s2 = 2.0 * sigma * sigma;
    if q >= 1.0 {
        return alpha as f64 / s2;
    }
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=a {
        let kf = k as f64;
        let term = lf[a] - lf[k] - lf[a - k] + kf * lq + (a - k) as f64 * l1q + (kf * kf - kf) / s2;
        log_a = log_add(log_a, term);
    }
    log_a / (alpha as f64 - 1.0)
}

/// Epsilon after `steps` compositions at sampling rate `q`, for the given delta.
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    let t = steps as f64;
    default_orders()
        .into_iter()
        .map(|alpha| {
            let a = alpha as f64;
            let rdp = t * rdp_sampled_gaussian(q, sigma, alpha);
            rdp + ((a - 1.0) / a).ln() - (delta.ln() + a.ln()) / (a - 1.0)
        })
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Epsilon of the policy; `f64::INFINITY` when `sigma == 0` (no guarantee).
pub fn account_epsilon(policy: &DpPolicy) -> Result<f64> {
    policy.validate()?;
    if !(policy.sample_rate > 0.0 && policy.sample_rate <= 1.0) || policy.steps == 0 {
        return Err(Error::config("accounting needs q in (0, 1] and at least one step"));
    }
    Ok(epsilon_for(policy.sample_rate, policy.sigma, policy.steps, policy.delta))
}
