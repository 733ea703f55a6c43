//! NGMA evaluation protocol: per trial, a random target and a fixed number
//! of round aggregates whose union batch does or does not contain it.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledSample, PartnerDataset};
use crate::error::{Error, Result};
use crate::federation::{fixed_point_sum, partner_update, Federation, FederationConfig};
use crate::nn::{HeadParams, TrunkGradient, TrunkParams};
use crate::rng::{self, tag};

use super::ngma::ngma;
use super::{AttackMetrics, Confusion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgmaProtocolConfig {
    pub trials: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Federation rounds trained before the attack batches are drawn.
    pub warmup_rounds: u32,
    pub majority: f64,
}

impl Default for NgmaProtocolConfig {
    fn default() -> Self {
        Self { trials: 200, positives: 50, negatives: 50, warmup_rounds: 50, majority: 0.5 }
    }
}

impl NgmaProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("ngma protocol needs at least one trial"));
        }
        if self.positives == 0 || self.negatives == 0 {
            return Err(Error::config("ngma protocol needs both positive and negative batches"));
        }
        Ok(())
    }
}

/// `k` distinct indices from `0..len`, skipping `skip`.
fn sample_excluding<R: Rng>(r: &mut R, len: usize, k: usize, skip: Option<usize>) -> Vec<usize> {
    let pool = len - usize::from(skip.is_some());
    let mut out = rand::seq::index::sample(r, pool, k.min(pool)).into_vec();
    if let Some(s) = skip {
        for i in &mut out {
            if *i >= s {
                *i += 1;
            }
        }
    }
    out
}

/// Attack metrics plus the model the batches were evaluated against.
#[derive(Debug, Clone)]
pub struct NgmaProtocolOutcome {
    pub metrics: AttackMetrics,
    pub trunk: TrunkParams,
    pub heads: BTreeMap<u32, HeadParams>,
}

/// Trains `warmup_rounds` rounds, then runs the protocol against the
/// resulting model. Every evaluation draws fresh batches for all partners
/// and applies the configured policies; with secure aggregation on, the
/// aggregate is the decoded fixed-point sum.
pub fn ngma_protocol(
    datasets: &[PartnerDataset],
    fed_config: &FederationConfig,
    config: &NgmaProtocolConfig,
    seed: u64,
) -> Result<NgmaProtocolOutcome> {
    config.validate()?;
    let mut warm = fed_config.clone();
    warm.rounds = config.warmup_rounds.max(1);
    warm.schedule.clear();
    let mut fed = Federation::new(datasets, &warm, seed)?;
    for _ in 0..config.warmup_rounds {
        fed.step()?;
    }
    let trunk = fed.trunk().clone();
    let heads = fed.heads().clone();
    let sizes: Vec<usize> = datasets.iter().map(|d| fed_config.effective_batch(d.len())).collect::<Result<_>>()?;

    let eligible: Vec<(usize, usize)> = datasets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.len() >= 2)
        .flat_map(|(p, d)| (0..d.len()).map(move |i| (p, i)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::attack("no partner holds two samples, so negative batches cannot exclude a target"));
    }
    let per_trial = (config.positives + config.negatives) as u64;

    let confusions: Vec<Confusion> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::derive(seed, &[tag::ATTACK, t as u64]);
            let (owner, ti) = eligible[r.random_range(0..eligible.len())];
            let target = &datasets[owner].samples[ti];
            let mut c = Confusion::default();
            for e in 0..per_trial {
                let positive = e < config.positives as u64;
                let round = (1u64 << 40) + t as u64 * per_trial + e;
                let compression = fed_config.compression.prepare(trunk.param_count(), round);
                let mut grads: Vec<TrunkGradient> = Vec::with_capacity(datasets.len());
                for (p, d) in datasets.iter().enumerate() {
                    let idx = if p == owner {
                        let mut idx = sample_excluding(&mut r, d.len(), sizes[p] - usize::from(positive), Some(ti));
                        if positive {
                            idx.push(ti);
                        }
                        idx
                    } else {
                        sample_excluding(&mut r, d.len(), sizes[p], None)
                    };
                    let batch: Vec<&LabeledSample> = idx.iter().map(|&i| &d.samples[i]).collect();
                    let tags = [tag::ATTACK, t as u64, e, p as u64];
                    let (_, g, _) = partner_update(&trunk, &heads[&d.partner_id], &batch, fed_config, &compression, seed, &tags)?;
                    grads.push(g);
                }
                let agg = if fed_config.secure_aggregation { fixed_point_sum(&grads)? } else { TrunkGradient::sum(&grads)? };
                c.record(ngma(&agg, &target.fingerprint, config.majority)?.member, positive);
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut total = Confusion::default();
    for c in &confusions {
        total.merge(c);
    }
    Ok(NgmaProtocolOutcome { metrics: total.metrics(), trunk, heads })
}
