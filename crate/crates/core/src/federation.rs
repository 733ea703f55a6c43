//! Cross-silo training rounds.
//!
//! Every active partner takes one gradient step per round on its next batch,
//! applies the DP and compression policies to its trunk gradient, masks it,
//! and the server sums the masked updates. All partners then apply the mean
//! aggregate to the shared trunk and their own head gradient to their private
//! head.
//!
//! Attack code sees rounds only through [`RoundRecord`], which carries the
//! aggregate and, when secure aggregation is off and the debug channel is
//! enabled, per-partner gradients.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledSample, PartnerDataset};
use crate::error::{Error, Result};
use crate::mitigations::{dp_perturb_sparse, CompressionPolicy, DpPolicy, PreparedCompression};
use crate::nn::{self, HeadGradient, HeadParams, Mode, TrunkGradient, TrunkParams};
use crate::rng::{self, tag};
use crate::secure_agg::{self, MaskKeyring, MaskedUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Reshuffle each epoch and walk through it in consecutive batches.
    #[default]
    Shuffle,
    /// Draw every batch uniformly at random, independent across rounds.
    Uniform,
}

/// Partners active during rounds `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub start: u32,
    pub end: u32,
    pub partners: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub hidden: usize,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    pub batch_size: usize,
    pub rounds: u32,
    pub learning_rate: f64,
    pub compression: CompressionPolicy,
    pub dp: Option<DpPolicy>,
    pub secure_aggregation: bool,
    /// Add a mask known to partners but not to the server.
    pub group_mask: bool,
    /// Empty means every partner in every round.
    pub schedule: Vec<ScheduleEntry>,
    pub sampling: Sampling,
    /// Shrink the batch to the partner's dataset size instead of failing.
    pub clamp_batch: bool,
    /// Expose per-partner gradients in round records. Ignored when secure
    /// aggregation is on.
    pub debug_channel: bool,
    /// Run the masking protocol on full-length payloads. When false, secure
    /// aggregation yields the same decoded sum computed directly from the
    /// fixed-point encodings, without generating masks.
    pub mask_payloads: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            hidden: 40,
            input_dropout: 0.0,
            hidden_dropout: 0.2,
            batch_size: 25,
            rounds: 100,
            learning_rate: 0.05,
            compression: CompressionPolicy::None,
            dp: None,
            secure_aggregation: true,
            group_mask: false,
            schedule: Vec::new(),
            sampling: Sampling::Shuffle,
            clamp_batch: false,
            debug_channel: false,
            mask_payloads: true,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        for p in [self.input_dropout, self.hidden_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("dropout {p} outside [0, 1)")));
            }
        }
        self.compression.validate()?;
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }

    pub fn effective_batch(&self, dataset_len: usize) -> Result<usize> {
        if self.batch_size <= dataset_len {
            Ok(self.batch_size)
        } else if self.clamp_batch && dataset_len > 0 {
            Ok(dataset_len)
        } else {
            Err(Error::config(format!("batch size {} exceeds dataset of {dataset_len} samples", self.batch_size)))
        }
    }
}

/// Resolved partner-composition schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    rounds: u32,
    entries: Vec<ScheduleEntry>,
}

impl Schedule {
    pub fn new(config: &FederationConfig, partners: &[u32]) -> Result<Self> {
        let rounds = config.rounds;
        let mut entries = if config.schedule.is_empty() {
            vec![ScheduleEntry { start: 0, end: rounds, partners: partners.to_vec() }]
        } else {
            config.schedule.clone()
        };
        entries.sort_by_key(|e| e.start);
        let mut expect = 0;
        for e in &mut entries {
            if e.start != expect || e.end <= e.start {
                return Err(Error::config(format!("schedule intervals must partition [0, {rounds})")));
            }
            if e.partners.is_empty() {
                return Err(Error::config(format!("no partners active in rounds {}..{}", e.start, e.end)));
            }
            e.partners.sort_unstable();
            e.partners.dedup();
            if let Some(p) = e.partners.iter().find(|p| !partners.contains(p)) {
                return Err(Error::config(format!("schedule references unknown partner {p}")));
            }
            expect = e.end;
        }
        if expect != rounds {
            return Err(Error::config(format!("schedule intervals must partition [0, {rounds})")));
        }
        Ok(Self { rounds, entries })
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn active(&self, round: u32) -> &[u32] {
        self.entries
            .iter()
            .find(|e| e.start <= round && round < e.end)
            .map(|e| e.partners.as_slice())
            .unwrap_or(&[])
    }

    /// Rounds in `0..round` in which `partner` took part.
    pub fn participation_before(&self, round: u32, partner: u32) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.partners.contains(&partner))
            .map(|e| u64::from(e.end.min(round).saturating_sub(e.start)))
            .sum()
    }

    /// Epoch of `partner` at `round`: its completed participations divided by
    /// its epoch length.
    pub fn epoch_index(&self, round: u32, partner: u32, epoch_len: u64) -> u64 {
        self.participation_before(round, partner) / epoch_len.max(1)
    }
}

#[derive(Debug, Clone)]
struct Sampler {
    len: usize,
    batch: usize,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

impl Sampler {
    fn new(len: usize, batch: usize, seed: u64, partner: u32) -> Self {
        let mut s = Self { len, batch, order: (0..len).collect(), pos: 0, epoch: 0 };
        s.reshuffle(seed, partner);
        s
    }

    fn reshuffle(&mut self, seed: u64, partner: u32) {
        self.order.sort_unstable();
        self.order.shuffle(&mut rng::derive(seed, &[tag::SHUFFLE, u64::from(partner), self.epoch]));
    }

    fn next(&mut self, sampling: Sampling, seed: u64, partner: u32, round: u32) -> Vec<usize> {
        match sampling {
            Sampling::Uniform => {
                let mut r = rng::derive(seed, &[tag::SHUFFLE, u64::from(partner), u64::from(round), 1]);
                rand::seq::index::sample(&mut r, self.len, self.batch).into_vec()
            }
            Sampling::Shuffle => {
                let end = (self.pos + self.batch).min(self.len);
                let out = self.order[self.pos..end].to_vec();
                self.pos = end;
                if self.pos >= self.len {
                    self.pos = 0;
                    self.epoch += 1;
                    self.reshuffle(seed, partner);
                }
                out
            }
        }
    }
}

/// The attacker-visible record of one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: u32,
    pub active: Vec<u32>,
    /// Sum of the active partners' post-policy trunk gradients, as decoded by
    /// a partner (before division by the active count and learning rate).
    pub aggregate: TrunkGradient,
    debug: Option<Vec<(u32, TrunkGradient)>>,
}

impl RoundRecord {
    /// Per-partner gradients; `None` unless secure aggregation is off and the
    /// debug channel is enabled.
    pub fn partner_gradients(&self) -> Option<&[(u32, TrunkGradient)]> {
        self.debug.as_deref()
    }
}

/// Evaluation-only ground truth of a round (which samples each partner used).
#[derive(Debug, Clone)]
pub struct RoundTruth {
    pub round: u32,
    pub batches: Vec<(u32, Vec<u64>)>,
}

impl RoundTruth {
    pub fn contains(&self, sample_id: u64) -> bool {
        self.batches.iter().any(|(_, b)| b.contains(&sample_id))
    }
}

pub trait RoundObserver {
    fn on_round(&mut self, record: &RoundRecord, truth: &RoundTruth) -> Result<()>;
}

impl RoundObserver for () {
    fn on_round(&mut self, _: &RoundRecord, _: &RoundTruth) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&RoundRecord, &RoundTruth) -> Result<()>> RoundObserver for F {
    fn on_round(&mut self, record: &RoundRecord, truth: &RoundTruth) -> Result<()> {
        self(record, truth)
    }
}

/// Keeps every record. Memory grows with rounds times support size.
#[derive(Debug, Default)]
pub struct Recorder {
    pub records: Vec<RoundRecord>,
    pub truths: Vec<RoundTruth>,
}

impl RoundObserver for Recorder {
    fn on_round(&mut self, record: &RoundRecord, truth: &RoundTruth) -> Result<()> {
        self.records.push(record.clone());
        self.truths.push(truth.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub active: usize,
    /// Mean of the active partners' batch losses.
    pub loss: f64,
    pub aggregate_nonzeros: usize,
}

pub fn write_metrics_jsonl<W: Write>(metrics: &[RoundMetrics], mut out: W) -> Result<()> {
    for m in metrics {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub trunk: TrunkParams,
    pub heads: BTreeMap<u32, HeadParams>,
    pub metrics: Vec<RoundMetrics>,
}

struct LocalStep {
    partner: u32,
    loss: f64,
    trunk: TrunkGradient,
    head: HeadGradient,
    batch_ids: Vec<u64>,
}

/// One partner's local step: loss and gradients on `batch`, then the DP and
/// compression policies on the trunk gradient. Dropout and noise streams are
/// derived from `seed` and `tags`.
pub(crate) fn partner_update(
    trunk: &TrunkParams,
    head: &HeadParams,
    batch: &[&LabeledSample],
    config: &FederationConfig,
    compression: &PreparedCompression,
    seed: u64,
    tags: &[u64],
) -> Result<(f64, TrunkGradient, HeadGradient)> {
    let stream = |t: u64| rng::derive(seed, &[&[t], tags].concat());
    let mut drop_rng = stream(tag::DROPOUT);
    let (loss, mut tg, hg) = match &config.dp {
        None => nn::loss_and_grads(trunk, head, batch, Mode::Train, &mut drop_rng)?,
        Some(dp) => {
            let (loss, per_sample, hg) = nn::per_sample_grads(trunk, head, batch, Mode::Train, &mut drop_rng)?;
            (loss, dp_perturb_sparse(&per_sample, dp, &mut stream(tag::DP_NOISE))?, hg)
        }
    };
    compression.apply_sparse(&mut tg)?;
    Ok((loss, tg, hg))
}

/// The decoded secure-aggregation sum: every addend rounded to the
/// fixed-point grid, then summed. Matches the masked protocol bit for bit.
pub fn fixed_point_sum<'a>(grads: impl IntoIterator<Item = &'a TrunkGradient>) -> Result<TrunkGradient> {
    let quantized: Vec<TrunkGradient> = grads
        .into_iter()
        .map(|g| {
            let mut q = g.clone();
            q.map_coords(|_, v| secure_agg::quantize(v));
            q
        })
        .collect();
    TrunkGradient::sum(&quantized)
}

/// Stepwise federation state.
pub struct Federation<'a> {
    datasets: BTreeMap<u32, &'a PartnerDataset>,
    config: FederationConfig,
    seed: u64,
    schedule: Schedule,
    trunk: TrunkParams,
    heads: BTreeMap<u32, HeadParams>,
    samplers: BTreeMap<u32, Sampler>,
    keyring: MaskKeyring,
    round: u32,
}

impl<'a> Federation<'a> {
    pub fn new(datasets: &'a [PartnerDataset], config: &FederationConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = datasets
            .iter()
            .find_map(|d| d.input_dim())
            .ok_or_else(|| Error::config("no samples in any dataset"))?;
        let mut map = BTreeMap::new();
        for d in datasets {
            if map.insert(d.partner_id, d).is_some() {
                return Err(Error::config(format!("partner {} appears twice", d.partner_id)));
            }
            if d.samples.iter().any(|s| s.fingerprint.n() != n) {
                return Err(Error::dimension("datasets disagree on input dimension"));
            }
        }
        let ids: Vec<u32> = map.keys().copied().collect();
        let schedule = Schedule::new(config, &ids)?;
        let trunk = TrunkParams::init(
            n,
            config.hidden,
            config.input_dropout,
            config.hidden_dropout,
            &mut rng::derive(seed, &[tag::INIT]),
        )?;
        let mut heads = BTreeMap::new();
        let mut samplers = BTreeMap::new();
        for (&id, d) in &map {
            let mut r = rng::derive(seed, &[tag::INIT, u64::from(id) + 1]);
            heads.insert(id, HeadParams::init(config.hidden, &d.task_ids, &mut r)?);
            let batch = config.effective_batch(d.len())?;
            samplers.insert(id, Sampler::new(d.len(), batch, seed, id));
        }
        let keyring = MaskKeyring::deal(&ids, config.group_mask, seed);
        Ok(Self { datasets: map, config: config.clone(), seed, schedule, trunk, heads, samplers, keyring, round: 0 })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.schedule.rounds()
    }

    pub fn trunk(&self) -> &TrunkParams {
        &self.trunk
    }

    pub fn heads(&self) -> &BTreeMap<u32, HeadParams> {
        &self.heads
    }

    /// Rounds per epoch for `partner`: `ceil(samples / batch)`.
    pub fn epoch_len(&self, partner: u32) -> Option<u64> {
        let s = self.samplers.get(&partner)?;
        Some(s.len.div_ceil(s.batch) as u64)
    }

    pub fn epoch_index(&self, round: u32, partner: u32) -> Option<u64> {
        Some(self.schedule.epoch_index(round, partner, self.epoch_len(partner)?))
    }

    fn local_step(&self, partner: u32, batch_idx: &[usize], round: u32, compression: &PreparedCompression) -> Result<LocalStep> {
        let data = self.datasets[&partner];
        let batch: Vec<&LabeledSample> = batch_idx.iter().map(|&i| &data.samples[i]).collect();
        let batch_ids = batch.iter().map(|s| s.sample_id).collect();
        let tags = [u64::from(partner), u64::from(round)];
        let (loss, trunk, head) =
            partner_update(&self.trunk, &self.heads[&partner], &batch, &self.config, compression, self.seed, &tags)?;
        Ok(LocalStep { partner, loss, trunk, head, batch_ids })
    }

    fn secure_sum(&self, steps: &[LocalStep], round: u32, roster: &[u32]) -> Result<TrunkGradient> {
        let messages: Vec<MaskedUpdate> = steps
            .par_iter()
            .map(|s| {
                let m = secure_agg::mask(&s.trunk.to_dense(), s.partner, round, &self.keyring.for_partner(s.partner), roster)?;
                MaskedUpdate::from_bytes(&m.to_bytes())
            })
            .collect::<Result<_>>()?;
        let agg = secure_agg::aggregate_round(&messages, roster)?;
        let decoded = secure_agg::unblind(&agg, self.keyring.group_seed(), round, roster.len());
        TrunkGradient::from_dense(self.trunk.input_dim(), self.trunk.hidden(), &decoded)
    }

    /// Runs one round and returns the attacker view, ground truth, and metrics.
    pub fn step(&mut self) -> Result<(RoundRecord, RoundTruth, RoundMetrics)> {
        if self.is_done() {
            return Err(Error::protocol("federation already finished"));
        }
        let round = self.round;
        let active = self.schedule.active(round).to_vec();
        let mut plan = Vec::with_capacity(active.len());
        for &p in &active {
            let idx = self.samplers.get_mut(&p).expect("known partner").next(self.config.sampling, self.seed, p, round);
            plan.push((p, idx));
        }
        let compression = self.config.compression.prepare(self.trunk.param_count(), u64::from(round));
        let steps: Vec<LocalStep> =
            plan.par_iter().map(|(p, idx)| self.local_step(*p, idx, round, &compression)).collect::<Result<_>>()?;

        let aggregate = if self.config.secure_aggregation && self.config.mask_payloads {
            self.secure_sum(&steps, round, &active)?
        } else if self.config.secure_aggregation {
            fixed_point_sum(steps.iter().map(|s| &s.trunk))?
        } else {
            TrunkGradient::sum(steps.iter().map(|s| &s.trunk))?
        };
        let lr = self.config.learning_rate;
        self.trunk.apply(&aggregate, lr / active.len() as f64)?;
        for s in &steps {
            self.heads.get_mut(&s.partner).expect("known partner").apply(&s.head, lr)?;
        }

        let debug = (self.config.debug_channel && !self.config.secure_aggregation)
            .then(|| steps.iter().map(|s| (s.partner, s.trunk.clone())).collect());
        let metrics = RoundMetrics {
            round,
            active: active.len(),
            loss: steps.iter().map(|s| s.loss).sum::<f64>() / steps.len() as f64,
            aggregate_nonzeros: aggregate.nonzero_count(),
        };
        let truth = RoundTruth { round, batches: steps.into_iter().map(|s| (s.partner, s.batch_ids)).collect() };
        self.round += 1;
        Ok((RoundRecord { round, active, aggregate, debug }, truth, metrics))
    }

    pub fn run_to_end(mut self, observer: &mut dyn RoundObserver) -> Result<FederationOutcome> {
        let mut metrics = Vec::with_capacity(self.schedule.rounds() as usize);
        while !self.is_done() {
            let (record, truth, m) = self.step()?;
            observer.on_round(&record, &truth)?;
            metrics.push(m);
        }
        Ok(FederationOutcome { trunk: self.trunk, heads: self.heads, metrics })
    }
}

/// Trains a federation end to end, streaming each round to `observer`.
pub fn run(
    datasets: &[PartnerDataset],
    config: &FederationConfig,
    seed: u64,
    observer: &mut dyn RoundObserver,
) -> Result<FederationOutcome> {
    Federation::new(datasets, config, seed)?.run_to_end(observer)
}
