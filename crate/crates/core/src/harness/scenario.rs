//! Named experiment pipelines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::attacks::{
    attack_trunk, n1_attack, ngma_protocol, trunk_activation_attack, AttackMetrics, N1Outcome, NgmaProtocolConfig,
    NgmaTap,
};
use crate::dataset::{generate, generate_slice, DatasetProfile, LabeledSample, PartnerDataset, PartnerShape};
use crate::error::{Error, Result};
use crate::federation::{run, write_metrics_jsonl, FederationConfig, ScheduleEntry};
use crate::mitigations::{account_epsilon, CompressionPolicy, DpPolicy};
use crate::nn::{label_accuracy, mean_task_auc, HeadParams, TrunkParams};
use crate::rng::{self, tag};

use super::config::ExperimentConfig;
use super::report::{Report, RunRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    BaselineTrain,
    NgmaEval,
    TrunkActivationEval,
    N1Scenario,
    DropoutSweep,
    BatchSweep,
    CompressionSweep,
    DpSweep,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::BaselineTrain,
        Scenario::NgmaEval,
        Scenario::TrunkActivationEval,
        Scenario::N1Scenario,
        Scenario::DropoutSweep,
        Scenario::BatchSweep,
        Scenario::CompressionSweep,
        Scenario::DpSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::BaselineTrain => "baseline-train",
            Scenario::NgmaEval => "ngma-eval",
            Scenario::TrunkActivationEval => "trunk-activation-eval",
            Scenario::N1Scenario => "n1-scenario",
            Scenario::DropoutSweep => "dropout-sweep",
            Scenario::BatchSweep => "batch-sweep",
            Scenario::CompressionSweep => "compression-sweep",
            Scenario::DpSweep => "dp-sweep",
        }
    }

    pub fn default_repetitions(self) -> usize {
        match self {
            Scenario::BaselineTrain | Scenario::NgmaEval => 1,
            Scenario::N1Scenario => 20,
            _ => 5,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario {s:?}")))
    }
}

type Metrics = BTreeMap<String, f64>;

fn put_attack(m: &mut Metrics, prefix: &str, a: &AttackMetrics) {
    m.insert(format!("{prefix}_accuracy"), a.accuracy);
    if let Some(p) = a.precision {
        m.insert(format!("{prefix}_precision"), p);
    }
    if let Some(r) = a.recall {
        m.insert(format!("{prefix}_recall"), r);
    }
    let c = a.confusion;
    for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
        m.insert(format!("{prefix}_{k}"), v as f64);
    }
}

fn put_n1(m: &mut Metrics, prefix: &str, o: &N1Outcome) {
    let t = o.table;
    for (k, v) in [("a", t.a), ("b", t.b), ("c", t.c), ("d", t.d)] {
        m.insert(format!("{prefix}{k}"), v as f64);
    }
    m.insert(format!("{prefix}p_value"), o.p_value);
    m.insert(format!("{prefix}attributed"), f64::from(u8::from(o.attributed)));
}

/// Fresh samples from each partner's distribution and task set.
fn heldout(profile: &DatasetProfile, data: &[PartnerDataset], seed: u64) -> Result<Vec<PartnerDataset>> {
    data.iter()
        .map(|d| {
            let count = d.len().clamp(1, 200);
            let start = (1u64 << 40) + (u64::from(d.partner_id) << 20);
            generate_slice(profile, d.partner_id, count, &d.task_ids, rng::mix(seed, &[0x4E1D]), start)
        })
        .collect()
}

/// Mean over partners of the per-task AUC and of the 0.5-threshold accuracy.
fn model_quality(
    trunk: &TrunkParams,
    heads: &BTreeMap<u32, HeadParams>,
    sets: &[PartnerDataset],
) -> Result<(Option<f64>, Option<f64>)> {
    let mut aucs = Vec::new();
    let mut accs = Vec::new();
    for d in sets {
        let head = &heads[&d.partner_id];
        aucs.extend(mean_task_auc(trunk, head, &d.samples)?);
        accs.extend(label_accuracy(trunk, head, &d.samples)?);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok((mean(&aucs), mean(&accs)))
}

fn put_quality(m: &mut Metrics, prefix: &str, q: (Option<f64>, Option<f64>)) {
    if let Some(a) = q.0 {
        m.insert(format!("{prefix}_auc"), a);
    }
    if let Some(a) = q.1 {
        m.insert(format!("{prefix}_accuracy"), a);
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    rep: usize,
    artifacts: Option<&'a Path>,
}

type Rows = Vec<(String, Metrics)>;

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn baseline_train(ctx: &Ctx) -> Result<Rows> {
    let data = stage("generate", generate(&ctx.cfg.data, ctx.seed))?;
    let out = stage("federation", run(&data, &ctx.cfg.federation, ctx.seed, &mut ()))?;
    if let Some(dir) = ctx.artifacts {
        std::fs::create_dir_all(dir)?;
        let f = File::create(dir.join(format!("rounds-rep{}.jsonl", ctx.rep)))?;
        write_metrics_jsonl(&out.metrics, BufWriter::new(f))?;
    }
    let mut m = Metrics::new();
    let tail = &out.metrics[out.metrics.len().saturating_sub(10)..];
    if !tail.is_empty() {
        m.insert("final_loss".into(), tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64);
    }
    if let Some(first) = out.metrics.first() {
        m.insert("initial_loss".into(), first.loss);
    }
    put_quality(&mut m, "train", model_quality(&out.trunk, &out.heads, &data)?);
    let test = heldout(&ctx.cfg.data, &data, ctx.seed)?;
    put_quality(&mut m, "test", model_quality(&out.trunk, &out.heads, &test)?);
    Ok(vec![("baseline".into(), m)])
}

fn ngma_run(ctx: &Ctx, data: &[PartnerDataset], fed: &FederationConfig, proto: &NgmaProtocolConfig) -> Result<Metrics> {
    let out = stage("ngma-protocol", ngma_protocol(data, fed, proto, ctx.seed))?;
    let mut m = Metrics::new();
    put_attack(&mut m, "ngma", &out.metrics);
    let test = heldout(&ctx.cfg.data, data, ctx.seed)?;
    put_quality(&mut m, "test", model_quality(&out.trunk, &out.heads, &test)?);
    Ok(m)
}

fn ngma_eval(ctx: &Ctx) -> Result<Rows> {
    let data = stage("generate", generate(&ctx.cfg.data, ctx.seed))?;
    Ok(vec![("no-mitigation".into(), ngma_run(ctx, &data, &ctx.cfg.federation, &ctx.cfg.ngma)?)])
}

/// Attacker data D and D' drawn from the profile's distribution.
fn attacker_sets(cfg: &ExperimentConfig, seed: u64, seen: usize, unseen: usize) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let tasks: BTreeSet<u32> = (0..cfg.trunk_activation.tasks.max(1) as u32).collect();
    let d = generate_slice(&cfg.data, 0, seen, &tasks, rng::mix(seed, &[tag::ATTACK, 1]), 0)?;
    let d2 = generate_slice(&cfg.data, 0, unseen, &tasks, rng::mix(seed, &[tag::ATTACK, 2]), 1 << 32)?;
    Ok((d.samples, d2.samples))
}

fn trunk_activation_run(ctx: &Ctx, fed: &FederationConfig) -> Result<Metrics> {
    let s = &ctx.cfg.trunk_activation;
    let (seen, unseen) = stage("attacker-data", attacker_sets(ctx.cfg, ctx.seed, s.seen, s.unseen))?;
    let shard = s.seen.div_ceil(s.attack.shadow_partners.clamp(1, s.seen.max(1)));
    let batch = fed.effective_batch(shard)?;
    let mut fed = fed.clone();
    fed.rounds = s.epochs * shard.div_ceil(batch) as u32;
    let report = stage("trunk-activation", trunk_activation_attack(&seen, &unseen, &fed, &s.attack, ctx.seed))?;
    let mut m = Metrics::new();
    put_attack(&mut m, "trunk_act", &report.validation);
    for (round, snap) in &report.snapshots {
        m.insert(format!("trunk_act_accuracy_round{round}"), snap.accuracy);
    }
    Ok(m)
}

/// Mean attack accuracy against untrained trunks.
pub fn untrained_trunk_null(cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    let s = &cfg.trunk_activation;
    let runs = s.null_seeds.max(1);
    let mut total = 0.0;
    for k in 0..runs {
        let k_seed = rng::mix(seed, &[tag::ATTACK, 3, k as u64]);
        let (seen, unseen) = attacker_sets(cfg, k_seed, s.seen, s.unseen)?;
        let trunk = TrunkParams::init(
            cfg.data.n,
            cfg.federation.hidden,
            0.0,
            0.0,
            &mut rng::derive(k_seed, &[tag::INIT]),
        )?;
        total += attack_trunk(&trunk, &seen, &unseen, &s.attack, k_seed)?.1.accuracy;
    }
    Ok(total / runs as f64)
}

fn trunk_activation_eval(ctx: &Ctx) -> Result<Rows> {
    let mut m = trunk_activation_run(ctx, &ctx.cfg.federation)?;
    m.insert("null_accuracy".into(), stage("null-calibration", untrained_trunk_null(ctx.cfg, ctx.seed))?);
    Ok(vec![("overfit-trunk".into(), m)])
}

/// Result of one leave-one-out run: the leaving partner's target and a
/// control target held by a staying partner.
#[derive(Debug, Clone, Copy)]
pub struct N1Run {
    pub target: N1Outcome,
    pub control: N1Outcome,
}

pub fn n1_run(cfg: &ExperimentConfig, seed: u64) -> Result<N1Run> {
    let s = &cfg.n1;
    if s.partners < 2 || s.leaving as usize >= s.partners {
        return Err(Error::config("n1 needs at least two partners and a valid leaving partner"));
    }
    let profile = DatasetProfile {
        partners: vec![PartnerShape { samples: s.samples, tasks: s.tasks }; s.partners],
        ..cfg.data.clone()
    };
    let data = stage("generate", generate(&profile, seed))?;
    let mut fed = cfg.federation.clone();
    fed.batch_size = s.batch_size;
    let epoch_len = s.samples.div_ceil(fed.effective_batch(s.samples)?) as u32;
    let span = s.attack.window * epoch_len;
    fed.rounds = 2 * span;
    let everyone: Vec<u32> = (0..s.partners as u32).collect();
    let stayers: Vec<u32> = everyone.iter().copied().filter(|&p| p != s.leaving).collect();
    fed.schedule = vec![
        ScheduleEntry { start: 0, end: span, partners: everyone },
        ScheduleEntry { start: span, end: 2 * span, partners: stayers },
    ];
    let mut r = rng::derive(seed, &[tag::ATTACK, 7]);
    let control_owner = (s.leaving as usize + 1) % s.partners;
    let target = &data[s.leaving as usize].samples[r.random_range(0..s.samples)];
    let control = &data[control_owner].samples[r.random_range(0..s.samples)];
    let mut tap = NgmaTap::new(vec![target.fingerprint.clone(), control.fingerprint.clone()], s.attack.majority);
    stage("federation", run(&data, &fed, seed, &mut tap))?;
    let target = stage("n1-attack", n1_attack(tap.verdicts(0), span, epoch_len, &s.attack))?;
    let control = stage("n1-attack", n1_attack(tap.verdicts(1), span, epoch_len, &s.attack))?;
    Ok(N1Run { target, control })
}

fn n1_scenario(ctx: &Ctx) -> Result<Rows> {
    let out = n1_run(ctx.cfg, ctx.seed)?;
    let mut m = Metrics::new();
    put_n1(&mut m, "", &out.target);
    put_n1(&mut m, "control_", &out.control);
    Ok(vec![("leave-one".into(), m)])
}

fn sweep_protocol(ctx: &Ctx) -> NgmaProtocolConfig {
    NgmaProtocolConfig { trials: ctx.cfg.sweeps.ngma_trials, ..ctx.cfg.ngma.clone() }
}

fn dropout_sweep(ctx: &Ctx) -> Result<Rows> {
    let data = stage("generate", generate(&ctx.cfg.data, ctx.seed))?;
    let proto = sweep_protocol(ctx);
    let mut rows = Vec::new();
    for &p in &ctx.cfg.sweeps.input_dropout {
        let fed = FederationConfig { input_dropout: p, ..ctx.cfg.federation.clone() };
        let mut m = ngma_run(ctx, &data, &fed, &proto)?;
        m.insert("input_dropout".into(), p);
        rows.push((format!("input_dropout={p}"), m));
    }
    Ok(rows)
}

fn batch_sweep(ctx: &Ctx) -> Result<Rows> {
    let data = stage("generate", generate(&ctx.cfg.data, ctx.seed))?;
    let proto = sweep_protocol(ctx);
    let mut rows = Vec::new();
    for &b in &ctx.cfg.sweeps.batch_size {
        let fed = FederationConfig { batch_size: b, ..ctx.cfg.federation.clone() };
        let mut m = ngma_run(ctx, &data, &fed, &proto)?;
        m.insert("batch_size".into(), b as f64);
        rows.push((format!("batch_size={b}"), m));
    }
    Ok(rows)
}

fn compression_param(c: &CompressionPolicy) -> f64 {
    match *c {
        CompressionPolicy::None => 0.0,
        CompressionPolicy::Threshold { tau } => tau,
        CompressionPolicy::TopK { fraction } | CompressionPolicy::RandomSubset { fraction, .. } => fraction,
    }
}

fn compression_sweep(ctx: &Ctx) -> Result<Rows> {
    let data = stage("generate", generate(&ctx.cfg.data, ctx.seed))?;
    let proto = sweep_protocol(ctx);
    let mut rows = Vec::new();
    for c in &ctx.cfg.sweeps.compression {
        let fed = FederationConfig { compression: c.clone(), ..ctx.cfg.federation.clone() };
        let mut m = ngma_run(ctx, &data, &fed, &proto)?;
        m.extend(trunk_activation_run(ctx, &fed)?);
        m.insert("compression_param".into(), compression_param(c));
        rows.push((c.label(), m));
    }
    Ok(rows)
}

fn merge(data: &[PartnerDataset]) -> Result<PartnerDataset> {
    let samples: Vec<LabeledSample> = data.iter().flat_map(|d| d.samples.iter().cloned()).collect();
    let tasks: BTreeSet<u32> = data.iter().flat_map(|d| d.task_ids.iter().copied()).collect();
    PartnerDataset::new(0, samples, tasks)
}

fn dp_sweep(ctx: &Ctx) -> Result<Rows> {
    let s = &ctx.cfg.dp_sweep;
    let data = stage("generate", generate(&ctx.cfg.data, ctx.seed))?;
    let test = vec![merge(&heldout(&ctx.cfg.data, &data, ctx.seed)?)?];
    let train = vec![merge(&data)?];
    let n = train[0].len();
    let mut fed = ctx.cfg.federation.clone();
    fed.schedule.clear();
    fed.secure_aggregation = false;
    let batch = fed.effective_batch(n)?;
    fed.rounds = s.epochs * n.div_ceil(batch) as u32;
    let mut rows = Vec::new();
    for &sigma in &s.sigmas {
        let dp = DpPolicy {
            clip_norm: s.clip_norm,
            sigma,
            delta: s.delta,
            sample_rate: batch as f64 / n as f64,
            steps: u64::from(fed.rounds),
        };
        let fed = FederationConfig { dp: Some(dp.clone()), ..fed.clone() };
        let out = stage("dp-training", run(&train, &fed, ctx.seed, &mut ()))?;
        let mut m = Metrics::new();
        m.insert("sigma".into(), sigma);
        let eps = account_epsilon(&dp)?;
        if eps.is_finite() {
            m.insert("epsilon".into(), eps);
        }
        let tr = model_quality(&out.trunk, &out.heads, &train)?;
        let te = model_quality(&out.trunk, &out.heads, &test)?;
        if let (Some(a), Some(b)) = (tr.0, te.0) {
            m.insert("auc_gap".into(), a - b);
        }
        put_quality(&mut m, "train", tr);
        put_quality(&mut m, "test", te);
        rows.push((format!("sigma={sigma}"), m));
    }
    Ok(rows)
}

fn notes(scenario: Scenario, cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = vec![
        "aggregate applied as the mean over active partners".to_string(),
        "attacks observe the pre-learning-rate aggregate; zero patterns are scale invariant".to_string(),
    ];
    if cfg.federation.secure_aggregation && !cfg.federation.mask_payloads {
        out.push("secure aggregation decoded via the exact fixed-point sum (masks not materialized)".to_string());
    }
    if cfg.federation.compression != CompressionPolicy::None || scenario == Scenario::CompressionSweep {
        out.push("masks remain full length under compression; no bandwidth saving".to_string());
    }
    if scenario == Scenario::DpSweep {
        out.push("centralized record-level DP; epsilon omitted where unbounded (sigma = 0)".to_string());
    }
    out
}

/// Runs `scenario` for its repetitions. Repetition `r` uses the seed
/// `mix(master_seed, r)`. Per-round metric streams go to `artifacts` when given.
pub fn run_scenario(
    scenario: Scenario,
    cfg: &ExperimentConfig,
    master_seed: u64,
    artifacts: Option<&Path>,
) -> Result<Report> {
    cfg.validate()?;
    let reps = cfg.repetitions.unwrap_or_else(|| scenario.default_repetitions());
    let runs: Vec<(u64, Rows)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rng::mix(master_seed, &[rep as u64]);
            let ctx = Ctx { cfg, seed, rep, artifacts };
            let rows = match scenario {
                Scenario::BaselineTrain => baseline_train(&ctx),
                Scenario::NgmaEval => ngma_eval(&ctx),
                Scenario::TrunkActivationEval => trunk_activation_eval(&ctx),
                Scenario::N1Scenario => n1_scenario(&ctx),
                Scenario::DropoutSweep => dropout_sweep(&ctx),
                Scenario::BatchSweep => batch_sweep(&ctx),
                Scenario::CompressionSweep => compression_sweep(&ctx),
                Scenario::DpSweep => dp_sweep(&ctx),
            }?;
            Ok((seed, rows))
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage(scenario.name()))?;

    let mut report = Report::new(scenario.name(), master_seed, reps, cfg.hash());
    report.notes = notes(scenario, cfg);
    let mut by_setting: Vec<(String, Vec<RunRow>)> = Vec::new();
    for (rep, (seed, rows)) in runs.into_iter().enumerate() {
        for (setting, metrics) in rows {
            let row = RunRow { run_id: format!("{setting}/rep{rep}"), setting: setting.clone(), seed, metrics };
            match by_setting.iter_mut().find(|(s, _)| *s == setting) {
                Some((_, v)) => v.push(row),
                None => by_setting.push((setting, vec![row])),
            }
        }
    }
    report.rows = by_setting.into_iter().flat_map(|(_, v)| v).collect();
    report.aggregate();
    Ok(report)
}
