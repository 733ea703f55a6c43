//! Trunk/head network with sparse-input forward and exact backward passes.
//!
//! The trunk is one linear layer over the fingerprint followed by ReLU; each
//! partner's head is one linear layer to that partner's task logits. The
//! first-layer gradient is kept row-sparse: only rows for inputs active in the
//! batch are materialized, and every other row is exactly zero.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Fingerprint, LabeledSample};
use crate::error::{Error, Result};

/// Initial value of every trunk bias. Slightly positive so that most ReLU
/// units start in their active region.
pub const TRUNK_BIAS_INIT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("dropout probability {p} outside [0, 1)")))
    }
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..=limit)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkParams {
    n: usize,
    h: usize,
    /// Row-major `n x h`.
    w1: Vec<f64>,
    b1: Vec<f64>,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
}

/// Cached quantities of one training-mode trunk evaluation.
#[derive(Debug, Clone)]
struct TrunkTrace {
    kept: Vec<u32>,
    input_scale: f64,
    pre: Vec<f64>,
    /// Per-unit hidden dropout multiplier (0 or 1/(1-p)).
    hidden_mask: Vec<f64>,
    out: Vec<f64>,
}

impl TrunkParams {
    pub fn init<R: Rng + ?Sized>(
        n: usize,
        h: usize,
        input_dropout: f64,
        hidden_dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_dropout(input_dropout)?;
        check_dropout(hidden_dropout)?;
        if n == 0 || h == 0 {
            return Err(Error::config("trunk dimensions must be positive"));
        }
        Ok(Self {
            n,
            h,
            w1: glorot(rng, n, h, n * h),
            b1: vec![TRUNK_BIAS_INIT; h],
            input_dropout,
            hidden_dropout,
        })
    }

    pub fn zeros(n: usize, h: usize) -> Self {
        Self { n, h, w1: vec![0.0; n * h], b1: vec![0.0; h], input_dropout: 0.0, hidden_dropout: 0.0 }
    }

    pub fn from_parts(n: usize, h: usize, w1: Vec<f64>, b1: Vec<f64>) -> Result<Self> {
        if w1.len() != n * h || b1.len() != h {
            return Err(Error::dimension(format!(
                "trunk parts have lengths ({}, {}), expected ({}, {h})",
                w1.len(),
                b1.len(),
                n * h
            )));
        }
        if w1.iter().chain(&b1).any(|v| !v.is_finite()) {
            return Err(Error::config("trunk weights must be finite"));
        }
        Ok(Self { n, h, w1, b1, input_dropout: 0.0, hidden_dropout: 0.0 })
    }

    pub fn with_dropout(mut self, input_dropout: f64, hidden_dropout: f64) -> Result<Self> {
        check_dropout(input_dropout)?;
        check_dropout(hidden_dropout)?;
        self.input_dropout = input_dropout;
        self.hidden_dropout = hidden_dropout;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    /// Length of the flattened `(W1, b1)` parameter vector.
    pub fn param_count(&self) -> usize {
        self.n * self.h + self.h
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w1_row(&self, i: usize) -> &[f64] {
        &self.w1[i * self.h..(i + 1) * self.h]
    }

    pub fn w1_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.w1[i * self.h..(i + 1) * self.h]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        &mut self.b1
    }

    fn check_input(&self, x: &Fingerprint) -> Result<()> {
        if x.n() != self.n {
            return Err(Error::dimension(format!("fingerprint dimension {} != trunk input {}", x.n(), self.n)));
        }
        Ok(())
    }

    fn trace<R: Rng + ?Sized>(&self, x: &Fingerprint, mode: Mode, rng: &mut R) -> Result<TrunkTrace> {
        self.check_input(x)?;
        let train = mode == Mode::Train;
        let (kept, input_scale) = if train && self.input_dropout > 0.0 {
            let keep = 1.0 - self.input_dropout;
            let kept: Vec<u32> = x.indices().iter().copied().filter(|_| rng.random::<f64>() < keep).collect();
            (kept, 1.0 / keep)
        } else {
            (x.indices().to_vec(), 1.0)
        };
        let mut pre = vec![0.0; self.h];
        for &i in &kept {
            for (z, w) in pre.iter_mut().zip(self.w1_row(i as usize)) {
                *z += w;
            }
        }
        for (z, b) in pre.iter_mut().zip(&self.b1) {
            *z = *z * input_scale + b;
        }
        let hidden_mask: Vec<f64> = if train && self.hidden_dropout > 0.0 {
            let keep = 1.0 - self.hidden_dropout;
            (0..self.h).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
        } else {
            vec![1.0; self.h]
        };
        let out = pre.iter().zip(&hidden_mask).map(|(&z, &m)| z.max(0.0) * m).collect();
        Ok(TrunkTrace { kept, input_scale, pre, hidden_mask, out })
    }

    /// Post-ReLU activations. Dropout applies only in [`Mode::Train`]; eval
    /// mode never touches `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Fingerprint, mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.trace(x, mode, rng)?.out)
    }

    /// Deterministic eval-mode activations.
    pub fn activations(&self, x: &Fingerprint) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = vec![0.0; self.h];
        for &i in x.indices() {
            for (z, w) in a.iter_mut().zip(self.w1_row(i as usize)) {
                *z += w;
            }
        }
        for (z, b) in a.iter_mut().zip(&self.b1) {
            *z = (*z + b).max(0.0);
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    h: usize,
    task_ids: Vec<u32>,
    /// Row-major `h x k`.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(h: usize, task_ids: &BTreeSet<u32>, rng: &mut R) -> Result<Self> {
        if task_ids.is_empty() {
            return Err(Error::config("head needs at least one task"));
        }
        let k = task_ids.len();
        Ok(Self { h, task_ids: task_ids.iter().copied().collect(), w2: glorot(rng, h, k, h * k), b2: vec![0.0; k] })
    }

    pub fn from_parts(h: usize, task_ids: Vec<u32>, w2: Vec<f64>, b2: Vec<f64>) -> Result<Self> {
        let k = task_ids.len();
        if w2.len() != h * k || b2.len() != k {
            return Err(Error::dimension("head parts do not match h x k"));
        }
        if task_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::dimension("head task ids must be strictly increasing"));
        }
        Ok(Self { h, task_ids, w2, b2 })
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn outputs(&self) -> usize {
        self.task_ids.len()
    }

    pub fn task_ids(&self) -> &[u32] {
        &self.task_ids
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    pub fn column(&self, task: u32) -> Option<usize> {
        self.task_ids.binary_search(&task).ok()
    }

    pub fn forward(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.h {
            return Err(Error::dimension(format!("activation length {} != head input {}", a.len(), self.h)));
        }
        let k = self.outputs();
        let mut logits = self.b2.clone();
        for (j, &aj) in a.iter().enumerate() {
            if aj == 0.0 {
                continue;
            }
            for (l, w) in logits.iter_mut().zip(&self.w2[j * k..(j + 1) * k]) {
                *l += aj * w;
            }
        }
        Ok(logits)
    }
}

/// First-layer gradient with rows only for inputs active in the batch.
///
/// Flat coordinate of weight `(i, j)` is `i * h + j`; bias `j` is `n * h + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkGradient {
    n: usize,
    h: usize,
    rows: Vec<u32>,
    dw1: Vec<f64>,
    db1: Vec<f64>,
}

impl TrunkGradient {
    pub fn zeros(n: usize, h: usize) -> Self {
        Self { n, h, rows: Vec::new(), dw1: Vec::new(), db1: vec![0.0; h] }
    }

    fn with_support(n: usize, h: usize, rows: Vec<u32>) -> Self {
        let len = rows.len() * h;
        Self { n, h, rows, dw1: vec![0.0; len], db1: vec![0.0; h] }
    }

    pub fn from_rows(n: usize, h: usize, rows: Vec<(u32, Vec<f64>)>, db1: Vec<f64>) -> Result<Self> {
        if db1.len() != h {
            return Err(Error::dimension("bias gradient length != h"));
        }
        let mut rows = rows;
        rows.sort_by_key(|(i, _)| *i);
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::dimension("duplicate gradient row"));
        }
        let mut g = Self::zeros(n, h);
        g.db1 = db1;
        for (i, r) in rows {
            if i as usize >= n || r.len() != h {
                return Err(Error::dimension(format!("gradient row {i} malformed")));
            }
            g.rows.push(i);
            g.dw1.extend(r);
        }
        Ok(g)
    }

    /// Rebuilds from a flat vector, keeping only rows with a non-zero entry.
    pub fn from_dense(n: usize, h: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != n * h + h {
            return Err(Error::dimension(format!("flat gradient length {} != {}", flat.len(), n * h + h)));
        }
        let mut g = Self::zeros(n, h);
        for (i, row) in flat[..n * h].chunks_exact(h).enumerate() {
            if row.iter().any(|&v| v != 0.0) {
                g.rows.push(i as u32);
                g.dw1.extend_from_slice(row);
            }
        }
        g.db1.copy_from_slice(&flat[n * h..]);
        Ok(g)
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n * self.h + self.h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input indices whose rows are materialized (a superset of the non-zero rows).
    pub fn support(&self) -> &[u32] {
        &self.rows
    }

    pub fn batch_support(&self) -> BTreeSet<u32> {
        self.rows.iter().copied().collect()
    }

    pub fn row(&self, i: u32) -> Option<&[f64]> {
        self.rows.binary_search(&i).ok().map(|p| &self.dw1[p * self.h..(p + 1) * self.h])
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().copied().zip(self.dw1.chunks_exact(self.h.max(1)))
    }

    pub fn db1(&self) -> &[f64] {
        &self.db1
    }

    /// Iterates `(flat_index, value)` over materialized coordinates in
    /// ascending flat order.
    pub fn coords(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let h = self.h;
        let base = self.n * h;
        self.rows
            .iter()
            .enumerate()
            .flat_map(move |(p, &i)| (0..h).map(move |j| (i as usize * h + j, self.dw1[p * h + j])))
            .chain(self.db1.iter().enumerate().map(move |(j, &v)| (base + j, v)))
    }

    /// Applies `f(flat_index, value)` to every materialized coordinate.
    pub fn map_coords(&mut self, mut f: impl FnMut(usize, f64) -> f64) {
        let h = self.h;
        for (p, &i) in self.rows.iter().enumerate() {
            for j in 0..h {
                let v = &mut self.dw1[p * h + j];
                *v = f(i as usize * h + j, *v);
            }
        }
        let base = self.n * h;
        for (j, v) in self.db1.iter_mut().enumerate() {
            *v = f(base + j, *v);
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.dw1.iter().chain(&self.db1).filter(|&&v| v != 0.0).count()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dw1.iter().chain(&self.db1).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.dw1.iter_mut().chain(self.db1.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut flat = vec![0.0; self.len()];
        for (i, row) in self.rows() {
            flat[i as usize * self.h..(i as usize + 1) * self.h].copy_from_slice(row);
        }
        flat[self.n * self.h..].copy_from_slice(&self.db1);
        flat
    }

    /// `self + other`, merging supports.
    pub fn add(&self, other: &TrunkGradient) -> Result<TrunkGradient> {
        if self.n != other.n || self.h != other.h {
            return Err(Error::dimension("adding gradients of different shapes"));
        }
        let h = self.h;
        let mut out = TrunkGradient::zeros(self.n, h);
        let (mut a, mut b) = (0, 0);
        while a < self.rows.len() || b < other.rows.len() {
            let ia = self.rows.get(a).copied().unwrap_or(u32::MAX);
            let ib = other.rows.get(b).copied().unwrap_or(u32::MAX);
            if ia < ib {
                out.rows.push(ia);
                out.dw1.extend_from_slice(&self.dw1[a * h..(a + 1) * h]);
                a += 1;
            } else if ib < ia {
                out.rows.push(ib);
                out.dw1.extend_from_slice(&other.dw1[b * h..(b + 1) * h]);
                b += 1;
            } else {
                out.rows.push(ia);
                let ra = &self.dw1[a * h..(a + 1) * h];
                let rb = &other.dw1[b * h..(b + 1) * h];
                out.dw1.extend(ra.iter().zip(rb).map(|(x, y)| x + y));
                a += 1;
                b += 1;
            }
        }
        out.db1 = self.db1.iter().zip(&other.db1).map(|(x, y)| x + y).collect();
        Ok(out)
    }

    /// Sum of a non-empty list of gradients.
    pub fn sum<'a>(grads: impl IntoIterator<Item = &'a TrunkGradient>) -> Result<TrunkGradient> {
        let mut it = grads.into_iter();
        let first = it.next().ok_or_else(|| Error::dimension("sum of zero gradients"))?.clone();
        it.try_fold(first, |acc, g| acc.add(g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadGradient {
    pub dw2: Vec<f64>,
    pub db2: Vec<f64>,
}

impl HeadGradient {
    fn zeros(head: &HeadParams) -> Self {
        Self { dw2: vec![0.0; head.w2.len()], db2: vec![0.0; head.b2.len()] }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `y`, computed stably.
pub fn bce_with_logit(logit: f64, y: u8) -> f64 {
    logit.max(0.0) - logit * f64::from(y) + (-logit.abs()).exp().ln_1p()
}

fn batch_support(batch: &[&LabeledSample]) -> Vec<u32> {
    let mut rows: Vec<u32> = batch.iter().flat_map(|s| s.fingerprint.indices().iter().copied()).collect();
    rows.sort_unstable();
    rows.dedup();
    rows
}

fn check_batch(trunk: &TrunkParams, head: &HeadParams, batch: &[&LabeledSample]) -> Result<usize> {
    if head.h != trunk.h {
        return Err(Error::dimension("head width does not match trunk width"));
    }
    let mut pairs = 0;
    for s in batch {
        for &(t, _) in &s.labels {
            if head.column(t).is_none() {
                return Err(Error::dimension(format!("sample {} labels task {t} unknown to head", s.sample_id)));
            }
        }
        pairs += s.labels.len();
    }
    if pairs == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(pairs)
}

/// Accumulates one sample's loss and gradients with every label weighted by
/// `weight`. Returns the unweighted loss sum over its labels.
fn accumulate_sample<R: Rng + ?Sized>(
    trunk: &TrunkParams,
    head: &HeadParams,
    sample: &LabeledSample,
    weight: f64,
    mode: Mode,
    rng: &mut R,
    tg: &mut TrunkGradient,
    hg: &mut HeadGradient,
) -> Result<f64> {
    let tr = trunk.trace(&sample.fingerprint, mode, rng)?;
    let h = trunk.h;
    let k = head.outputs();
    let logits = head.forward(&tr.out)?;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; h];
    for &(t, y) in &sample.labels {
        let c = head.column(t).expect("checked");
        let l = logits[c];
        loss += bce_with_logit(l, y);
        let dl = (sigmoid(l) - f64::from(y)) * weight;
        hg.db2[c] += dl;
        for j in 0..h {
            hg.dw2[j * k + c] += tr.out[j] * dl;
            d_out[j] += head.w2[j * k + c] * dl;
        }
    }
    let d_pre: Vec<f64> = (0..h)
        .map(|j| if tr.pre[j] > 0.0 { d_out[j] * tr.hidden_mask[j] } else { 0.0 })
        .collect();
    for (b, d) in tg.db1.iter_mut().zip(&d_pre) {
        *b += d;
    }
    for &i in &tr.kept {
        let p = tg.rows.binary_search(&i).expect("support covers sample indices");
        for (g, d) in tg.dw1[p * h..(p + 1) * h].iter_mut().zip(&d_pre) {
            *g += tr.input_scale * d;
        }
    }
    Ok(loss)
}

/// Mean masked binary cross-entropy over every observed `(sample, task)`
/// pair in the batch, with its exact gradients.
///
/// The trunk gradient materializes rows for every index active in some batch
/// sample (before input dropout); all other rows are exactly zero.
pub fn loss_and_grads<R: Rng + ?Sized>(
    trunk: &TrunkParams,
    head: &HeadParams,
    batch: &[&LabeledSample],
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, TrunkGradient, HeadGradient)> {
    let pairs = check_batch(trunk, head, batch)?;
    let weight = 1.0 / pairs as f64;
    let mut tg = TrunkGradient::with_support(trunk.n, trunk.h, batch_support(batch));
    let mut hg = HeadGradient::zeros(head);
    let mut loss = 0.0;
    for s in batch {
        loss += accumulate_sample(trunk, head, s, weight, mode, rng, &mut tg, &mut hg)?;
    }
    Ok((loss * weight, tg, hg))
}

/// Per-sample gradients, each of the sample's own mean loss over its
/// labels. Samples without labels yield zero gradients. The returned loss and
/// head gradient are the means over samples.
pub fn per_sample_grads<R: Rng + ?Sized>(
    trunk: &TrunkParams,
    head: &HeadParams,
    batch: &[&LabeledSample],
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, Vec<TrunkGradient>, HeadGradient)> {
    check_batch(trunk, head, batch)?;
    let b = batch.len() as f64;
    let mut head_sum = HeadGradient::zeros(head);
    let mut loss = 0.0;
    let mut out = Vec::with_capacity(batch.len());
    for s in batch {
        let mut tg = TrunkGradient::with_support(trunk.n, trunk.h, s.fingerprint.indices().to_vec());
        if s.labels.is_empty() {
            out.push(tg);
            continue;
        }
        let w = 1.0 / s.labels.len() as f64;
        let mut hg = HeadGradient::zeros(head);
        loss += w * accumulate_sample(trunk, head, s, w, mode, rng, &mut tg, &mut hg)?;
        for (a, x) in head_sum.dw2.iter_mut().zip(&hg.dw2) {
            *a += x / b;
        }
        for (a, x) in head_sum.db2.iter_mut().zip(&hg.db2) {
            *a += x / b;
        }
        out.push(tg);
    }
    Ok((loss / b, out, head_sum))
}

/// `theta <- theta - lr * g`, elementwise.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dimension("parameter and gradient lengths differ"));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

impl TrunkParams {
    /// SGD step touching only the gradient's materialized rows.
    pub fn apply(&mut self, grad: &TrunkGradient, lr: f64) -> Result<()> {
        if grad.n != self.n || grad.h != self.h {
            return Err(Error::dimension("gradient shape does not match trunk"));
        }
        for (i, row) in grad.rows() {
            sgd_step(self.w1_row_mut(i as usize), row, lr)?;
        }
        sgd_step(&mut self.b1, &grad.db1, lr)
    }
}

impl HeadParams {
    pub fn apply(&mut self, grad: &HeadGradient, lr: f64) -> Result<()> {
        sgd_step(&mut self.w2, &grad.dw2, lr)?;
        sgd_step(&mut self.b2, &grad.db2, lr)
    }
}

/// ROC AUC by the rank statistic with tie-averaged ranks. `None` when only
/// one class is present.
pub fn auc(scores: &[(f64, u8)]) -> Option<f64> {
    let pos = scores.iter().filter(|s| s.1 == 1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&o| scores[o].1 == 1).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Eval-mode AUC per task, averaged over tasks where both classes occur.
pub fn mean_task_auc(trunk: &TrunkParams, head: &HeadParams, samples: &[LabeledSample]) -> Result<Option<f64>> {
    let mut per_task: Vec<Vec<(f64, u8)>> = vec![Vec::new(); head.outputs()];
    for s in samples {
        if s.labels.is_empty() {
            continue;
        }
        let logits = head.forward(&trunk.activations(&s.fingerprint)?)?;
        for &(t, y) in &s.labels {
            if let Some(c) = head.column(t) {
                per_task[c].push((logits[c], y));
            }
        }
    }
    let aucs: Vec<f64> = per_task.iter().filter_map(|v| auc(v)).collect();
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}

/// Fraction of observed labels predicted correctly at a 0.5 threshold.
pub fn label_accuracy(trunk: &TrunkParams, head: &HeadParams, samples: &[LabeledSample]) -> Result<Option<f64>> {
    let (mut hit, mut total) = (0usize, 0usize);
    for s in samples {
        if s.labels.is_empty() {
            continue;
        }
        let logits = head.forward(&trunk.activations(&s.fingerprint)?)?;
        for &(t, y) in &s.labels {
            if let Some(c) = head.column(t) {
                total += 1;
                hit += usize::from(u8::from(logits[c] > 0.0) == y);
            }
        }
    }
    Ok((total > 0).then(|| hit as f64 / total as f64))
}
