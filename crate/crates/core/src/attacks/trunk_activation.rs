//! Membership inference from trunk activations with a forest trained on a
//! shadow federation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledSample, PartnerDataset};
use crate::error::{Error, Result};
use crate::federation::{Federation, FederationConfig};
use crate::nn::TrunkParams;
use crate::rng::{self, tag};

use super::forest::{train_forest_with, AttackForest, ForestConfig};
use super::{AttackMetrics, Confusion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrunkActivationConfig {
    /// Share of the labeled activations used to train the forest.
    pub train_fraction: f64,
    pub forest: ForestConfig,
    /// Partners the shadow data is split across.
    pub shadow_partners: usize,
    /// Additional rounds at which the intermediate trunk is attacked.
    pub snapshot_rounds: Vec<u32>,
}

impl Default for TrunkActivationConfig {
    fn default() -> Self {
        Self { train_fraction: 0.66, forest: ForestConfig::default(), shadow_partners: 2, snapshot_rounds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkActivationReport {
    /// Metrics on the held-out share of the final trunk's activations.
    pub validation: AttackMetrics,
    /// `(round, metrics)` for each requested intermediate trunk.
    pub snapshots: Vec<(u32, AttackMetrics)>,
    #[serde(skip)]
    pub forest: Option<AttackForest>,
    #[serde(skip)]
    pub trunk: Option<TrunkParams>,
}

/// Eval-mode activations, labeled `true` for `seen`.
pub fn activation_features(
    trunk: &TrunkParams,
    seen: &[LabeledSample],
    unseen: &[LabeledSample],
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let mut x = Vec::with_capacity(seen.len() + unseen.len());
    let mut y = Vec::with_capacity(x.capacity());
    for (set, label) in [(seen, true), (unseen, false)] {
        for s in set {
            x.push(trunk.activations(&s.fingerprint)?);
            y.push(label);
        }
    }
    Ok((x, y))
}

fn evaluate(forest: &AttackForest, x: &[Vec<f64>], y: &[bool]) -> Result<AttackMetrics> {
    let mut c = Confusion::default();
    for (xi, &yi) in x.iter().zip(y) {
        c.record(forest.predict(xi)?.member, yi);
    }
    Ok(c.metrics())
}

/// Labels activations of `trunk`, splits them at random into training and
/// validation shares, trains the forest and scores it on the validation share.
pub fn attack_trunk(
    trunk: &TrunkParams,
    seen: &[LabeledSample],
    unseen: &[LabeledSample],
    config: &TrunkActivationConfig,
    seed: u64,
) -> Result<(AttackForest, AttackMetrics)> {
    if seen.is_empty() || unseen.is_empty() {
        return Err(Error::attack("both seen and unseen samples are required"));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::config("train fraction must lie in (0, 1)"));
    }
    let (x, y) = activation_features(trunk, seen, unseen)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut rng::derive(seed, &[tag::ATTACK, 0]));
    let cut = ((x.len() as f64 * config.train_fraction).round() as usize).clamp(1, x.len() - 1);
    let pick = |ix: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) { ix.iter().map(|&i| (x[i].clone(), y[i])).unzip() };
    let (tx, ty) = pick(&order[..cut]);
    let (vx, vy) = pick(&order[cut..]);
    let forest = train_forest_with(&tx, &ty, &config.forest, rng::mix(seed, &[tag::FOREST]))?;
    let metrics = evaluate(&forest, &vx, &vy)?;
    Ok((forest, metrics))
}

/// Scores a trained forest against another trunk's activations.
pub fn query_trunk(
    forest: &AttackForest,
    trunk: &TrunkParams,
    members: &[LabeledSample],
    non_members: &[LabeledSample],
) -> Result<AttackMetrics> {
    let (x, y) = activation_features(trunk, members, non_members)?;
    evaluate(forest, &x, &y)
}

fn split_shadow(seen: &[LabeledSample], parts: usize) -> Result<Vec<PartnerDataset>> {
    let parts = parts.clamp(1, seen.len());
    (0..parts)
        .map(|p| {
            let samples: Vec<LabeledSample> = seen.iter().skip(p).step_by(parts).cloned().collect();
            let tasks: BTreeSet<u32> = samples.iter().flat_map(|s| s.labels.iter().map(|l| l.0)).collect();
            PartnerDataset::new(p as u32, samples, tasks)
        })
        .collect()
}

/// Full pipeline: trains a federation on `seen`, split across
/// `shadow_partners` partners, then attacks its final trunk and any
/// requested intermediate trunks. `unseen` never enters training.
pub fn trunk_activation_attack(
    seen: &[LabeledSample],
    unseen: &[LabeledSample],
    fed_config: &FederationConfig,
    config: &TrunkActivationConfig,
    seed: u64,
) -> Result<TrunkActivationReport> {
    if unseen.is_empty() {
        return Err(Error::attack("the unseen set is empty"));
    }
    let seen_ids: BTreeSet<u64> = seen.iter().map(|s| s.sample_id).collect();
    if unseen.iter().any(|s| seen_ids.contains(&s.sample_id)) {
        return Err(Error::attack("seen and unseen sets overlap"));
    }
    let shadow = split_shadow(seen, config.shadow_partners)?;
    let mut cfg = fed_config.clone();
    cfg.schedule.clear();
    let mut fed = Federation::new(&shadow, &cfg, seed)?;
    let mut snapshots = Vec::new();
    while !fed.is_done() {
        if config.snapshot_rounds.contains(&fed.round()) {
            let (_, m) = attack_trunk(fed.trunk(), seen, unseen, config, seed)?;
            snapshots.push((fed.round(), m));
        }
        fed.step()?;
    }
    let trunk = fed.trunk().clone();
    let (forest, validation) = attack_trunk(&trunk, seen, unseen, config, seed)?;
    Ok(TrunkActivationReport { validation, snapshots, forest: Some(forest), trunk: Some(trunk) })
}
