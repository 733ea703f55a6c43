//! Synthetic sparse fingerprint datasets and the `.fps` text format.
//!
//! Fingerprints are sparse binary vectors stored as sorted index sets. Labels
//! come from a planted logistic teacher per task, keyed by the profile's
//! teacher seed, so every dataset drawn from one profile shares a single
//! underlying distribution regardless of the sampling seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Hard bounds on the number of active bits per generated fingerprint.
pub const MIN_ACTIVE_BITS: usize = 5;
pub const MAX_ACTIVE_BITS: usize = 64;

/// Per-partner sample and task counts of the reference ten-partner split.
pub const REFERENCE_SPLIT: [(usize, usize); 10] = [
    (256, 2),
    (432, 8),
    (4301, 22),
    (7076, 46),
    (5576, 32),
    (32954, 182),
    (35692, 150),
    (45796, 217),
    (64903, 309),
    (68359, 340),
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    indices: Vec<u32>,
    n: u32,
}

impl Fingerprint {
    /// Builds a fingerprint from strictly increasing indices below `n`.
    pub fn new(indices: Vec<u32>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::dimension("fingerprint has no active bits"));
        }
        if indices.len() > n {
            return Err(Error::dimension("more active bits than input dimension"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::dimension("fingerprint indices must be strictly increasing"));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= n {
                return Err(Error::dimension(format!("index {last} out of range for n={n}")));
            }
        }
        Ok(Self { indices, n: n as u32 })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut indices: Vec<u32>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, n)
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: u32) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: u64,
    pub fingerprint: Fingerprint,
    /// Observed `(task_id, label)` pairs, sorted by task id. Labels are 0 or 1.
    pub labels: Vec<(u32, u8)>,
}

impl LabeledSample {
    pub fn new(sample_id: u64, fingerprint: Fingerprint, mut labels: Vec<(u32, u8)>) -> Result<Self> {
        labels.sort_unstable_by_key(|&(t, _)| t);
        if labels.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::dimension(format!("sample {sample_id} repeats a task id")));
        }
        if labels.iter().any(|&(_, y)| y > 1) {
            return Err(Error::dimension(format!("sample {sample_id} has a non-binary label")));
        }
        Ok(Self { sample_id, fingerprint, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerDataset {
    pub partner_id: u32,
    pub samples: Vec<LabeledSample>,
    pub task_ids: BTreeSet<u32>,
}

impl PartnerDataset {
    pub fn new(partner_id: u32, samples: Vec<LabeledSample>, task_ids: BTreeSet<u32>) -> Result<Self> {
        if task_ids.is_empty() {
            return Err(Error::config(format!("partner {partner_id} has no tasks")));
        }
        for s in &samples {
            if let Some(&(t, _)) = s.labels.iter().find(|(t, _)| !task_ids.contains(t)) {
                return Err(Error::config(format!(
                    "sample {} of partner {partner_id} labels unknown task {t}",
                    s.sample_id
                )));
            }
        }
        Ok(Self { partner_id, samples, task_ids })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task_count(&self) -> usize {
        self.task_ids.len()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.fingerprint.n())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerShape {
    pub samples: usize,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetProfile {
    /// Input (folded fingerprint) dimension.
    pub n: usize,
    pub partners: Vec<PartnerShape>,
    /// Mean number of active bits per fingerprint.
    pub active_bits_mean: f64,
    /// Fraction of a partner's tasks observed per sample.
    pub label_density: f64,
    pub teacher_seed: u64,
    /// Multiplier applied to the teacher's normalized logit.
    pub teacher_gain: f64,
    pub disjoint_tasks: bool,
}

impl Default for DatasetProfile {
    fn default() -> Self {
        Self::reference_scaled(100, 10)
    }
}

impl DatasetProfile {
    /// The reference ten-partner split with sample counts divided by
    /// `sample_div` and task counts divided by `task_div` (both rounded up).
    pub fn reference_scaled(sample_div: usize, task_div: usize) -> Self {
        let partners = REFERENCE_SPLIT
            .iter()
            .map(|&(s, t)| PartnerShape {
                samples: s.div_ceil(sample_div.max(1)),
                tasks: t.div_ceil(task_div.max(1)),
            })
            .collect();
        Self {
            n: 2048,
            partners,
            active_bits_mean: 20.0,
            label_density: 0.3,
            teacher_seed: 0x5EED,
            teacher_gain: 3.0,
            disjoint_tasks: true,
        }
    }

    /// `count` partners of identical shape.
    pub fn uniform(count: usize, samples: usize, tasks: usize) -> Self {
        Self {
            partners: vec![PartnerShape { samples, tasks }; count],
            ..Self::reference_scaled(100, 10)
        }
    }

    pub fn partner_count(&self) -> usize {
        self.partners.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.partners.len() < 2 {
            return Err(Error::config("profile needs at least two partners"));
        }
        if self.n == 0 || self.n > u32::MAX as usize {
            return Err(Error::config("input dimension out of range"));
        }
        if !(self.active_bits_mean > 0.0 && self.active_bits_mean < self.n as f64) {
            return Err(Error::config(format!(
                "active-bit mean {} must lie in (0, n={})",
                self.active_bits_mean, self.n
            )));
        }
        if !(self.label_density > 0.0 && self.label_density <= 1.0) {
            return Err(Error::config("label density must lie in (0, 1]"));
        }
        if let Some(p) = self.partners.iter().position(|p| p.tasks == 0) {
            return Err(Error::config(format!("partner {p} has zero tasks")));
        }
        if !self.teacher_gain.is_finite() {
            return Err(Error::config("teacher gain must be finite"));
        }
        Ok(())
    }

    /// Task ids of each partner: consecutive disjoint blocks, or overlapping
    /// prefixes `0..k_j` when tasks are shared.
    pub fn task_layout(&self) -> Vec<BTreeSet<u32>> {
        let mut next = 0u32;
        self.partners
            .iter()
            .map(|p| {
                if self.disjoint_tasks {
                    let set = (next..next + p.tasks as u32).collect();
                    next += p.tasks as u32;
                    set
                } else {
                    (0..p.tasks as u32).collect()
                }
            })
            .collect()
    }
}

/// Planted logistic teacher: one Gaussian weight per input bit and task.
struct Teacher {
    n: usize,
    gain: f64,
    seed: u64,
}

impl Teacher {
    fn task_weights(&self, task: u32) -> (Vec<f64>, f64) {
        let mut r = rng::derive(self.seed, &[tag::TEACHER, task as u64]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let w = (0..self.n).map(|_| normal.sample(&mut r)).collect();
        let bias = 0.5 * normal.sample(&mut r);
        (w, bias)
    }
}

fn draw_fingerprint<R: Rng>(r: &mut R, n: usize, lambda: f64) -> Fingerprint {
    let lo = MIN_ACTIVE_BITS.min(n);
    let hi = MAX_ACTIVE_BITS.min(n);
    let poisson = Poisson::new(lambda).expect("positive lambda");
    let k = (poisson.sample(r) as usize).clamp(lo, hi);
    let idx: Vec<u32> = index::sample(r, n, k).into_iter().map(|i| i as u32).collect();
    Fingerprint::from_unsorted(idx, n).expect("sampled indices are valid")
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Generates one silo of `sample_count` samples labeled over `task_ids`.
///
/// Sample ids run from `id_start`. Shares the profile's teacher, so calling
/// this with a fresh seed draws more data from the same distribution.
pub fn generate_slice(
    profile: &DatasetProfile,
    partner_id: u32,
    sample_count: usize,
    task_ids: &BTreeSet<u32>,
    seed: u64,
    id_start: u64,
) -> Result<PartnerDataset> {
    if !(profile.active_bits_mean > 0.0 && profile.active_bits_mean < profile.n as f64) {
        return Err(Error::config("active-bit mean must lie in (0, n)"));
    }
    if task_ids.is_empty() {
        return Err(Error::config(format!("partner {partner_id} has zero tasks")));
    }
    let teacher = Teacher { n: profile.n, gain: profile.teacher_gain, seed: profile.teacher_seed };
    let tasks: Vec<u32> = task_ids.iter().copied().collect();
    let weights: Vec<(Vec<f64>, f64)> = tasks.iter().map(|&t| teacher.task_weights(t)).collect();
    let per_sample = ((profile.label_density * tasks.len() as f64).round() as usize).clamp(1, tasks.len());

    let mut r = rng::derive(seed, &[tag::SAMPLES, partner_id as u64]);
    let mut samples = Vec::with_capacity(sample_count);
    for s in 0..sample_count {
        let fp = draw_fingerprint(&mut r, profile.n, profile.active_bits_mean);
        let norm = (fp.len() as f64).sqrt();
        let mut labels: Vec<(u32, u8)> = index::sample(&mut r, tasks.len(), per_sample)
            .into_iter()
            .map(|ti| {
                let (w, b) = &weights[ti];
                let z: f64 = fp.indices().iter().map(|&i| w[i as usize]).sum::<f64>() / norm;
                let p = sigmoid(teacher.gain * z + b);
                (tasks[ti], u8::from(r.random::<f64>() < p))
            })
            .collect();
        labels.sort_unstable_by_key(|&(t, _)| t);
        samples.push(LabeledSample { sample_id: id_start + s as u64, fingerprint: fp, labels });
    }
    PartnerDataset::new(partner_id, samples, task_ids.clone())
}

/// Generates every partner silo described by `profile`. Deterministic in
/// `(profile, seed)`.
pub fn generate(profile: &DatasetProfile, seed: u64) -> Result<Vec<PartnerDataset>> {
    profile.validate()?;
    let layout = profile.task_layout();
    let mut next_id = 0u64;
    let mut out = Vec::with_capacity(profile.partners.len());
    for (j, (shape, tasks)) in profile.partners.iter().zip(&layout).enumerate() {
        out.push(generate_slice(profile, j as u32, shape.samples, tasks, seed, next_id)?);
        next_id += shape.samples as u64;
    }
    Ok(out)
}

/// Serializes datasets to the `.fps` text format.
///
/// ```text
/// n=<dim> tasks=<distinct task count>
/// partner=<id> tasks=<t1,t2,...>
/// <sample_id>\t<i1,i2,...>\t<task:label;task:label>
/// ```
pub fn to_fps_string(datasets: &[PartnerDataset]) -> Result<String> {
    let n = datasets
        .iter()
        .find_map(|d| d.input_dim())
        .ok_or_else(|| Error::config("cannot save datasets without samples"))?;
    let all_tasks: BTreeSet<u32> = datasets.iter().flat_map(|d| d.task_ids.iter().copied()).collect();
    let mut out = String::new();
    writeln!(out, "n={n} tasks={}", all_tasks.len()).unwrap();
    for d in datasets {
        let tasks: Vec<String> = d.task_ids.iter().map(u32::to_string).collect();
        writeln!(out, "partner={} tasks={}", d.partner_id, tasks.join(",")).unwrap();
        for s in &d.samples {
            if s.fingerprint.n() != n {
                return Err(Error::dimension("datasets disagree on input dimension"));
            }
            let idx: Vec<String> = s.fingerprint.indices().iter().map(u32::to_string).collect();
            let labels: Vec<String> = s.labels.iter().map(|(t, y)| format!("{t}:{y}")).collect();
            writeln!(out, "{}\t{}\t{}", s.sample_id, idx.join(","), labels.join(";")).unwrap();
        }
    }
    Ok(out)
}

pub fn save(datasets: &[PartnerDataset], path: impl AsRef<Path>) -> Result<()> {
    let text = to_fps_string(datasets)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<PartnerDataset>> {
    read_fps(std::fs::File::open(path)?)
}

pub fn parse_fps(text: &str) -> Result<Vec<PartnerDataset>> {
    read_fps(text.as_bytes())
}

struct Section {
    partner_id: u32,
    tasks: Option<BTreeSet<u32>>,
    samples: Vec<LabeledSample>,
    line: usize,
}

fn parse_u32_list(field: &str, line: usize, what: &str) -> Result<Vec<u32>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|_| Error::parse(line, format!("bad {what} `{t}`"))))
        .collect()
}

fn parse_header(text: &str, line: usize) -> Result<(usize, usize)> {
    let mut n = None;
    let mut tasks = None;
    for kv in text.split_whitespace() {
        match kv.split_once('=') {
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            Some(("tasks", v)) => tasks = v.parse::<usize>().ok(),
            _ => return Err(Error::parse(line, format!("unexpected header field `{kv}`"))),
        }
    }
    match (n, tasks) {
        (Some(n), Some(t)) if n > 0 => Ok((n, t)),
        _ => Err(Error::parse(line, "header must be `n=<int> tasks=<int>`")),
    }
}

fn parse_partner_line(text: &str, line: usize) -> Result<Section> {
    let mut id = None;
    let mut tasks = None;
    for kv in text.split_whitespace() {
        match kv.split_once('=') {
            Some(("partner", v)) => {
                id = Some(v.parse::<u32>().map_err(|_| Error::parse(line, "bad partner id"))?)
            }
            Some(("tasks", v)) => {
                let list = parse_u32_list(v, line, "task id")?;
                let set: BTreeSet<u32> = list.iter().copied().collect();
                if set.len() != list.len() {
                    return Err(Error::parse(line, "duplicate task in partner task list"));
                }
                tasks = Some(set);
            }
            _ => return Err(Error::parse(line, format!("unexpected partner field `{kv}`"))),
        }
    }
    let partner_id = id.ok_or_else(|| Error::parse(line, "partner line lacks `partner=<id>`"))?;
    Ok(Section { partner_id, tasks, samples: Vec::new(), line })
}

fn parse_sample_line(text: &str, line: usize, n: usize) -> Result<LabeledSample> {
    let mut fields = text.split('\t');
    let id_field = fields.next().unwrap_or_default();
    let idx_field = fields.next().ok_or_else(|| Error::parse(line, "missing index field"))?;
    let label_field = fields.next().unwrap_or("");
    if fields.next().is_some() {
        return Err(Error::parse(line, "too many fields"));
    }
    let sample_id = id_field
        .trim()
        .parse::<u64>()
        .map_err(|_| Error::parse(line, format!("bad sample id `{id_field}`")))?;
    let indices = parse_u32_list(idx_field.trim(), line, "index")?;
    if let Some(&bad) = indices.iter().find(|&&i| i as usize >= n) {
        return Err(Error::parse(line, format!("index {bad} out of range for n={n}")));
    }
    let fingerprint = Fingerprint::new(indices, n).map_err(|e| Error::parse(line, e.to_string()))?;
    let mut labels = Vec::new();
    for item in label_field.trim().split(';').filter(|s| !s.is_empty()) {
        let (t, y) = item
            .split_once(':')
            .ok_or_else(|| Error::parse(line, format!("bad label `{item}`")))?;
        let t = t.trim().parse::<u32>().map_err(|_| Error::parse(line, format!("bad task `{t}`")))?;
        let y = match y.trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(Error::parse(line, format!("label `{other}` is not binary"))),
        };
        labels.push((t, y));
    }
    LabeledSample::new(sample_id, fingerprint, labels).map_err(|_| Error::parse(line, "duplicate task in labels"))
}

/// Parses `.fps` text. Sample lines before any `partner=` line belong to an
/// implicit partner 0 whose tasks are those its labels mention.
pub fn read_fps<R: Read>(reader: R) -> Result<Vec<PartnerDataset>> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (n, declared_tasks) = loop {
        match lines.next() {
            Some((i, l)) => {
                let l = l?;
                if l.trim().is_empty() {
                    continue;
                }
                break parse_header(l.trim(), i + 1)?;
            }
            None => return Err(Error::parse(1, "empty file")),
        }
    };

    let mut sections: Vec<Section> = Vec::new();
    for (i, l) in lines {
        let l = l?;
        let lineno = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        if l.starts_with("partner=") {
            let s = parse_partner_line(l.trim(), lineno)?;
            if sections.iter().any(|o| o.partner_id == s.partner_id) {
                return Err(Error::parse(lineno, format!("partner {} declared twice", s.partner_id)));
            }
            sections.push(s);
            continue;
        }
        let sample = parse_sample_line(&l, lineno, n)?;
        if sections.is_empty() {
            sections.push(Section { partner_id: 0, tasks: None, samples: Vec::new(), line: lineno });
        }
        let sec = sections.last_mut().unwrap();
        if let Some(tasks) = &sec.tasks {
            if let Some(&(t, _)) = sample.labels.iter().find(|(t, _)| !tasks.contains(t)) {
                return Err(Error::parse(lineno, format!("task {t} not declared for partner {}", sec.partner_id)));
            }
        }
        sec.samples.push(sample);
    }

    let mut out = Vec::with_capacity(sections.len());
    let mut all_tasks = BTreeSet::new();
    for sec in sections {
        let tasks = match sec.tasks {
            Some(t) => t,
            None => sec.samples.iter().flat_map(|s| s.labels.iter().map(|&(t, _)| t)).collect(),
        };
        all_tasks.extend(tasks.iter().copied());
        let d = PartnerDataset::new(sec.partner_id, sec.samples, tasks)
            .map_err(|e| Error::parse(sec.line, e.to_string()))?;
        out.push(d);
    }
    if all_tasks.len() != declared_tasks {
        return Err(Error::parse(1, format!(
            "header declares {declared_tasks} tasks but partners define {}",
            all_tasks.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_profile() -> DatasetProfile {
        DatasetProfile {
            n: 256,
            partners: vec![PartnerShape { samples: 30, tasks: 3 }, PartnerShape { samples: 20, tasks: 2 }],
            ..DatasetProfile::default()
        }
    }

    #[test]
    fn default_profile_is_reference_split_scaled() {
        let p = DatasetProfile::default();
        assert_eq!(p.partner_count(), 10);
        let samples: Vec<usize> = p.partners.iter().map(|s| s.samples).collect();
        assert_eq!(samples, vec![3, 5, 44, 71, 56, 330, 357, 458, 650, 684]);
        let d = generate(&p, 1).unwrap();
        assert_eq!(d.len(), 10);
        for (ds, shape) in d.iter().zip(&p.partners) {
            assert_eq!(ds.len(), shape.samples);
            assert_eq!(ds.task_count(), shape.tasks);
        }
    }

    #[test]
    fn clipping_forces_minimum_active_bits() {
        let p = DatasetProfile {
            n: 8,
            active_bits_mean: 1.0,
            partners: vec![PartnerShape { samples: 1, tasks: 1 }, PartnerShape { samples: 1, tasks: 1 }],
            ..DatasetProfile::default()
        };
        let d = generate(&p, 3).unwrap();
        assert_eq!(d[0].samples[0].fingerprint.len(), 5);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = small_profile();
        let a = to_fps_string(&generate(&p, 9).unwrap()).unwrap();
        let b = to_fps_string(&generate(&p, 9).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = to_fps_string(&generate(&p, 10).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_profiles_rejected() {
        let mut p = small_profile();
        p.active_bits_mean = 256.0;
        assert!(matches!(generate(&p, 0), Err(Error::Config(_))));
        let mut p = small_profile();
        p.partners[1].tasks = 0;
        assert!(matches!(generate(&p, 0), Err(Error::Config(_))));
        let mut p = small_profile();
        p.partners.truncate(1);
        assert!(generate(&p, 0).is_err());
    }

    #[test]
    fn disjoint_task_layout() {
        let p = small_profile();
        let d = generate(&p, 0).unwrap();
        assert!(d[0].task_ids.is_disjoint(&d[1].task_ids));
        let mut p = small_profile();
        p.disjoint_tasks = false;
        let d = generate(&p, 0).unwrap();
        assert!(d[1].task_ids.is_subset(&d[0].task_ids));
    }

    #[test]
    fn parses_single_line() {
        let ds = parse_fps("n=2048 tasks=2\n7\t3,19,1042\t2:1;5:0\n").unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds[0].samples[0];
        assert_eq!(s.sample_id, 7);
        assert_eq!(s.fingerprint.indices(), &[3, 19, 1042]);
        assert_eq!(s.labels, vec![(2, 1), (5, 0)]);
    }

    #[test]
    fn empty_label_field_is_legal() {
        let ds = parse_fps("n=16 tasks=1\npartner=0 tasks=4\n1\t2,3\t\n2\t5\n").unwrap();
        assert!(ds[0].samples[0].labels.is_empty());
        assert!(ds[0].samples[1].labels.is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_fps("n=2048 tasks=1\n1\t3,2048\t0:1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_fps("n=2048 tasks=1\n1\t3\t0:1\n2\t4\t0:1;0:0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_fps("n=2048 tasks=1\n1\t3\t0:2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_fps("n=2048 tasks=1\nx\t3\t0:1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_fps("n=16 tasks=2\npartner=0 tasks=1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_fps("n=16 tasks=1\npartner=0 tasks=1\n1\t3\t2:1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(parse_fps("bogus\n").is_err());
    }

    #[test]
    fn file_round_trip() {
        let d = generate(&small_profile(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fps");
        save(&d, &path).unwrap();
        assert_eq!(load(&path).unwrap(), d);
    }

    #[test]
    fn mean_active_bits_matches_lambda() {
        let p = DatasetProfile {
            partners: vec![PartnerShape { samples: 1500, tasks: 1 }, PartnerShape { samples: 500, tasks: 1 }],
            ..DatasetProfile::default()
        };
        let d = generate(&p, 21).unwrap();
        let counts: Vec<usize> = d.iter().flat_map(|x| x.samples.iter().map(|s| s.fingerprint.len())).collect();
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        let tol = 3.0 * (p.active_bits_mean / counts.len() as f64).sqrt();
        assert!((mean - p.active_bits_mean).abs() <= tol, "mean {mean}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn load_save_identity(seed in any::<u64>(), n in 8usize..600, disjoint in any::<bool>()) {
                let p = DatasetProfile {
                    n,
                    active_bits_mean: (n as f64 / 4.0).min(20.0),
                    partners: vec![PartnerShape { samples: 7, tasks: 3 }, PartnerShape { samples: 4, tasks: 1 }],
                    disjoint_tasks: disjoint,
                    ..DatasetProfile::default()
                };
                let d = generate(&p, seed).unwrap();
                let text = to_fps_string(&d).unwrap();
                prop_assert_eq!(parse_fps(&text).unwrap(), d);
            }
        }
    }
}
