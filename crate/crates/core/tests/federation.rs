use std::collections::BTreeMap;

use fedleak::dataset::{generate, DatasetProfile, LabeledSample, PartnerDataset};
use fedleak::federation::{run, Federation, FederationConfig, Recorder};
use fedleak::mitigations::CompressionPolicy;
use fedleak::nn::{loss_and_grads, HeadParams, Mode, TrunkParams};
use fedleak::rng::{self, tag};

fn data(partners: usize, samples: usize, tasks: usize, seed: u64) -> Vec<PartnerDataset> {
    let p = DatasetProfile { n: 256, active_bits_mean: 10.0, ..DatasetProfile::uniform(partners, samples, tasks) };
    generate(&p, seed).unwrap()
}

fn max_diff(a: &TrunkParams, b: &TrunkParams) -> f64 {
    a.w1().iter().chain(a.b1()).zip(b.w1().iter().chain(b.b1())).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// With one partner and no secure aggregation, a round is plain minibatch SGD
// on that partner's batch. Replays it by hand from the recorded batches.
#[test]
fn single_partner_matches_centralized_sgd() {
    let d = data(2, 40, 3, 5);
    let solo = &d[..1];
    let cfg = FederationConfig { secure_aggregation: false, batch_size: 8, rounds: 25, ..FederationConfig::default() };
    let seed = 77;
    let mut rec = Recorder::default();
    let out = run(solo, &cfg, seed, &mut rec).unwrap();

    let p = solo[0].partner_id;
    let mut trunk = TrunkParams::init(256, cfg.hidden, cfg.input_dropout, cfg.hidden_dropout, &mut rng::derive(seed, &[tag::INIT]))
        .unwrap();
    let mut head = HeadParams::init(cfg.hidden, &solo[0].task_ids, &mut rng::derive(seed, &[tag::INIT, u64::from(p) + 1])).unwrap();
    let by_id: BTreeMap<u64, &LabeledSample> = solo[0].samples.iter().map(|s| (s.sample_id, s)).collect();
    for truth in &rec.truths {
        let (_, ids) = &truth.batches[0];
        let batch: Vec<&LabeledSample> = ids.iter().map(|i| by_id[i]).collect();
        let mut r = rng::derive(seed, &[tag::DROPOUT, u64::from(p), u64::from(truth.round)]);
        let (_, tg, hg) = loss_and_grads(&trunk, &head, &batch, Mode::Train, &mut r).unwrap();
        trunk.apply(&tg, cfg.learning_rate).unwrap();
        head.apply(&hg, cfg.learning_rate).unwrap();
    }
    assert_eq!(out.trunk, trunk);
    assert_eq!(out.heads[&p], head);
}

#[test]
fn runs_are_bit_for_bit_reproducible() {
    let d = data(4, 30, 3, 1);
    let cfg = FederationConfig {
        batch_size: 5,
        rounds: 12,
        input_dropout: 0.2,
        compression: CompressionPolicy::RandomSubset { fraction: 0.5, seed: 3 },
        ..FederationConfig::default()
    };
    let a = run(&d, &cfg, 9, &mut ()).unwrap();
    let b = run(&d, &cfg, 9, &mut ()).unwrap();
    assert_eq!(a.trunk, b.trunk);
    assert_eq!(a.heads, b.heads);
    assert_eq!(a.metrics, b.metrics);
    let c = run(&d, &cfg, 10, &mut ()).unwrap();
    assert_ne!(a.trunk, c.trunk);
}

#[test]
fn masked_payloads_match_fixed_point_path_exactly() {
    let d = data(5, 30, 3, 2);
    let masked = FederationConfig { batch_size: 5, rounds: 10, group_mask: true, ..FederationConfig::default() };
    let plain = FederationConfig { mask_payloads: false, ..masked.clone() };
    let mut ra = Recorder::default();
    let mut rb = Recorder::default();
    let a = run(&d, &masked, 4, &mut ra).unwrap();
    let b = run(&d, &plain, 4, &mut rb).unwrap();
    assert_eq!(a.trunk, b.trunk);
    for (x, y) in ra.records.iter().zip(&rb.records) {
        assert_eq!(x.aggregate.to_dense(), y.aggregate.to_dense());
    }
}

#[test]
fn secure_aggregation_tracks_plain_training() {
    let d = data(10, 20, 3, 3);
    let on = FederationConfig { batch_size: 5, rounds: 30, ..FederationConfig::default() };
    let off = FederationConfig { secure_aggregation: false, ..on.clone() };
    let mut a = Federation::new(&d, &on, 6).unwrap();
    let mut b = Federation::new(&d, &off, 6).unwrap();
    let per_round = 10.0 * 2f64.powi(-17);
    while !a.is_done() {
        let (_, ta, _) = a.step().unwrap();
        let (_, tb, _) = b.step().unwrap();
        assert_eq!(ta.batches, tb.batches);
        let diff = max_diff(a.trunk(), b.trunk());
        assert!(diff <= f64::from(a.round()) * per_round, "round {}: {diff:e}", a.round());
    }
}

#[test]
fn aggregate_support_is_union_of_batches() {
    let d = data(3, 20, 2, 8);
    let cfg = FederationConfig { batch_size: 4, rounds: 6, secure_aggregation: false, hidden_dropout: 0.0, ..FederationConfig::default() };
    let mut rec = Recorder::default();
    run(&d, &cfg, 1, &mut rec).unwrap();
    let all: BTreeMap<u64, &LabeledSample> = d.iter().flat_map(|p| &p.samples).map(|s| (s.sample_id, s)).collect();
    for (r, t) in rec.records.iter().zip(&rec.truths) {
        let used: std::collections::BTreeSet<u32> =
            t.batches.iter().flat_map(|(_, ids)| ids).flat_map(|i| all[i].fingerprint.indices().iter().copied()).collect();
        for (i, row) in r.aggregate.rows() {
            if row.iter().any(|v| *v != 0.0) {
                assert!(used.contains(&i), "row {i} nonzero outside the batch support");
            }
        }
        assert!(r.aggregate.batch_support().is_subset(&used));
    }
}

fn dataset_loss(f: &Federation, data: &[PartnerDataset]) -> f64 {
    let mut r = rng::derive(0, &[]);
    let mut total = 0.0;
    for d in data {
        let batch: Vec<&LabeledSample> = d.samples.iter().filter(|s| !s.labels.is_empty()).collect();
        total += loss_and_grads(f.trunk(), &f.heads()[&d.partner_id], &batch, Mode::Eval, &mut r).unwrap().0;
    }
    total / data.len() as f64
}

#[test]
fn fifty_epochs_reduce_training_loss() {
    let d = data(2, 60, 3, 12);
    let cfg = FederationConfig { batch_size: 10, rounds: 50 * 6, ..FederationConfig::default() };
    let mut f = Federation::new(&d, &cfg, 2).unwrap();
    let epoch = f.epoch_len(0).unwrap();
    let mut after_first = None;
    while !f.is_done() {
        f.step().unwrap();
        if u64::from(f.round()) == epoch {
            after_first = Some(dataset_loss(&f, &d));
        }
    }
    let first = after_first.unwrap();
    let last = dataset_loss(&f, &d);
    assert!(last < first, "epoch 1 loss {first}, epoch 50 loss {last}");
}
