//! Run reports and their JSON / CSV emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One repetition of one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub setting: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub setting: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub master_seed: u64,
    pub repetitions: usize,
    pub config_hash: String,
    pub code_version: String,
    /// Pseudorandom function used for masks and random subsets.
    pub prf: String,
    pub notes: Vec<String>,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl Report {
    pub fn new(scenario: &str, master_seed: u64, repetitions: usize, config_hash: String) -> Self {
        Self {
            scenario: scenario.to_string(),
            master_seed,
            repetitions,
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            prf: "chacha20".to_string(),
            notes: Vec::new(),
            rows: Vec::new(),
            aggregates: Vec::new(),
        }
    }

    /// Recomputes `aggregates` from `rows`, keeping settings in first-seen order.
    pub fn aggregate(&mut self) {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            if !order.contains(&r.setting.as_str()) {
                order.push(&r.setting);
            }
            for (k, v) in &r.metrics {
                groups.entry((r.setting.as_str(), k.as_str())).or_default().push(*v);
            }
        }
        let mut out = Vec::new();
        for s in order {
            for ((_, metric), vals) in groups.range((s, "")..).take_while(|((g, _), _)| *g == s) {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                out.push(AggregateRow { setting: s.to_string(), metric: metric.to_string(), count: vals.len(), mean, std: var.sqrt() });
            }
        }
        self.aggregates = out;
    }

    pub fn mean(&self, setting: &str, metric: &str) -> Option<f64> {
        self.aggregates.iter().find(|a| a.setting == setting && a.metric == metric).map(|a| a.mean)
    }

    pub fn settings(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.setting.as_str()) {
                out.push(&r.setting);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::config(format!("unknown report format {other:?} (expected json or csv)"))),
        }
    }
}

fn metric_columns(rows: &[RunRow]) -> Vec<String> {
    let names: BTreeSet<&String> = rows.iter().flat_map(|r| r.metrics.keys()).collect();
    names.into_iter().cloned().collect()
}

/// Per-run rows as CSV: `run_id,setting,seed` then one column per metric
/// name in sorted order. Missing metrics are empty cells.
pub fn rows_to_csv(rows: &[RunRow]) -> Result<String> {
    let cols = metric_columns(rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run_id".to_string(), "setting".to_string(), "seed".to_string()];
    header.extend(cols.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.run_id.clone(), r.setting.clone(), r.seed.to_string()];
        rec.extend(cols.iter().map(|c| r.metrics.get(c).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.len() < 3 || header[..3] != ["run_id", "setting", "seed"] {
        return Err(Error::parse(1, "csv header must start with run_id,setting,seed"));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::parse(line + 2, m);
        let seed = rec[2].parse().map_err(|e| bad(format!("seed: {e}")))?;
        let mut metrics = BTreeMap::new();
        for (name, cell) in header[3..].iter().zip(rec.iter().skip(3)) {
            if !cell.is_empty() {
                metrics.insert(name.clone(), cell.parse().map_err(|e| bad(format!("{name}: {e}")))?);
            }
        }
        out.push(RunRow { run_id: rec[0].to_string(), setting: rec[1].to_string(), seed, metrics });
    }
    Ok(out)
}

pub fn aggregates_to_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "metric", "count", "mean", "std"])?;
    for a in rows {
        w.write_record([a.setting.clone(), a.metric.clone(), a.count.to_string(), a.mean.to_string(), a.std.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the report into `dir`: `report.json`, or `rows.csv` plus
/// `aggregates.csv`. Returns the written paths.
pub fn emit(report: &Report, format: Format, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    match format {
        Format::Json => {
            let p = dir.join("report.json");
            fs::write(&p, serde_json::to_string_pretty(report)?)?;
            Ok(vec![p])
        }
        Format::Csv => {
            let rows = dir.join("rows.csv");
            fs::write(&rows, rows_to_csv(&report.rows)?)?;
            let agg = dir.join("aggregates.csv");
            fs::write(&agg, aggregates_to_csv(&report.aggregates)?)?;
            Ok(vec![rows, agg])
        }
    }
}
