#![allow(dead_code)]

use fedleak::dataset::{Fingerprint, LabeledSample};
use fedleak::nn::{loss_and_grads, HeadParams, Mode, TrunkParams};
use fedleak::rng;
use rand::seq::index;
use rand::Rng;

/// A small random model plus batch for gradient checks.
pub struct GradInstance {
    pub trunk: TrunkParams,
    pub head: HeadParams,
    pub batch: Vec<LabeledSample>,
    pub mode: Mode,
    pub dropout_seed: u64,
}

/// Draws an instance whose hidden pre-activations all sit at least `margin`
/// away from the ReLU kink, so central differences stay on one side of it.
pub fn grad_instance(seed: u64, train: bool) -> GradInstance {
    let mut r = rng::derive(seed, &[0xF0]);
    let margin = 0.02;
    loop {
        let n = r.random_range(6..16);
        let h = r.random_range(2..6);
        let k = r.random_range(1..4);
        let w1: Vec<f64> = (0..n * h).map(|_| r.random_range(-0.6..0.6)).collect();
        let b1: Vec<f64> = (0..h).map(|_| r.random_range(-0.3..0.5)).collect();
        let w2: Vec<f64> = (0..h * k).map(|_| r.random_range(-0.8..0.8)).collect();
        let b2: Vec<f64> = (0..k).map(|_| r.random_range(-0.2..0.2)).collect();
        let size = r.random_range(1..5);
        let mut batch = Vec::new();
        for s in 0..size {
            let bits = r.random_range(1..n.min(6));
            let fp = Fingerprint::from_unsorted(
                index::sample(&mut r, n, bits).into_iter().map(|i| i as u32).collect(),
                n,
            )
            .unwrap();
            let nl = r.random_range(1..=k);
            let labels = index::sample(&mut r, k, nl)
                .into_iter()
                .map(|t| (t as u32, u8::from(r.random_bool(0.5))))
                .collect();
            batch.push(LabeledSample::new(s as u64, fp, labels).unwrap());
        }
        let near_kink = batch.iter().any(|s| {
            (0..h).any(|j| {
                let pre: f64 = s.fingerprint.indices().iter().map(|&i| w1[i as usize * h + j]).sum::<f64>() + b1[j];
                pre.abs() < margin
            })
        });
        if near_kink {
            continue;
        }
        let mut trunk = TrunkParams::from_parts(n, h, w1, b1).unwrap();
        if train {
            trunk = trunk.with_dropout(0.0, 0.3).unwrap();
        }
        let head = HeadParams::from_parts(h, (0..k as u32).collect(), w2, b2).unwrap();
        let mode = if train { Mode::Train } else { Mode::Eval };
        return GradInstance { trunk, head, batch, mode, dropout_seed: seed };
    }
}

fn loss_of(trunk: &TrunkParams, head: &HeadParams, inst: &GradInstance) -> f64 {
    let batch: Vec<&LabeledSample> = inst.batch.iter().collect();
    let mut r = rng::derive(inst.dropout_seed, &[0xD0]);
    loss_and_grads(trunk, head, &batch, inst.mode, &mut r).unwrap().0
}

/// Largest relative error between analytic and central-difference gradients
/// over every trunk and head parameter. The dropout stream is replayed for
/// each evaluation so the loss is a fixed function of the parameters.
pub fn fd_relative_error(inst: &GradInstance, step: f64) -> f64 {
    let batch: Vec<&LabeledSample> = inst.batch.iter().collect();
    let mut r = rng::derive(inst.dropout_seed, &[0xD0]);
    let (_, tg, hg) = loss_and_grads(&inst.trunk, &inst.head, &batch, inst.mode, &mut r).unwrap();
    let n = inst.trunk.input_dim();
    let h = inst.trunk.hidden();
    let dense = tg.to_dense();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let trunk_fd = |f: &dyn Fn(&mut TrunkParams, f64)| {
        let mut plus = inst.trunk.clone();
        f(&mut plus, step);
        let mut minus = inst.trunk.clone();
        f(&mut minus, -step);
        (loss_of(&plus, &inst.head, inst) - loss_of(&minus, &inst.head, inst)) / (2.0 * step)
    };
    for i in 0..n {
        for j in 0..h {
            analytic.push(dense[i * h + j]);
            numeric.push(trunk_fd(&|t: &mut TrunkParams, d| t.w1_row_mut(i)[j] += d));
        }
    }
    for j in 0..h {
        analytic.push(dense[n * h + j]);
        numeric.push(trunk_fd(&|t: &mut TrunkParams, d| t.b1_mut()[j] += d));
    }
    let ids = inst.head.task_ids().to_vec();
    let head_fd = |w2_at: Option<usize>, b2_at: Option<usize>| {
        let eval = |d: f64| {
            let mut w2 = inst.head.w2().to_vec();
            let mut b2 = inst.head.b2().to_vec();
            if let Some(p) = w2_at {
                w2[p] += d;
            }
            if let Some(p) = b2_at {
                b2[p] += d;
            }
            let head = HeadParams::from_parts(h, ids.clone(), w2, b2).unwrap();
            loss_of(&inst.trunk, &head, inst)
        };
        (eval(step) - eval(-step)) / (2.0 * step)
    };
    for p in 0..inst.head.w2().len() {
        analytic.push(hg.dw2[p]);
        numeric.push(head_fd(Some(p), None));
    }
    for p in 0..inst.head.b2().len() {
        analytic.push(hg.db2[p]);
        numeric.push(head_fd(None, Some(p)));
    }

    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| {
            let big = a.abs().max(b.abs());
            if big < 1e-7 {
                if (a - b).abs() < 1e-9 { 0.0 } else { f64::INFINITY }
            } else {
                (a - b).abs() / big
            }
        })
        .fold(0.0, f64::max)
}

/// Exact one-tailed Fisher p-value by enumerating every table with the same
/// margins and summing integer hypergeometric weights.
pub fn fisher_brute(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let row1 = a + b;
    let col1 = a + c;
    let n = a + b + c + d;
    let lo = col1.saturating_sub(n - row1);
    let hi = row1.min(col1);
    let mut tail: u128 = 0;
    let mut total: u128 = 0;
    for x in lo..=hi {
        let w = binom(row1, x) * binom(n - row1, col1 - x);
        total += w;
        if x >= a {
            tail += w;
        }
    }
    tail as f64 / total as f64
}

fn binom(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}
