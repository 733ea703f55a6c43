//! Experiment configuration: a TOML document with one table per concern,
//! plus dotted `key=value` overrides applied before deserialization.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{N1Config, NgmaProtocolConfig, TrunkActivationConfig};
use crate::dataset::DatasetProfile;
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::mitigations::CompressionPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrunkActivationSettings {
    pub attack: TrunkActivationConfig,
    /// Size of the attacker's training set D.
    pub seen: usize,
    /// Size of the never-trained set D'.
    pub unseen: usize,
    pub tasks: usize,
    /// Training epochs of the shadow federation.
    pub epochs: u32,
    /// Untrained trunks averaged for the null calibration.
    pub null_seeds: usize,
}

impl Default for TrunkActivationSettings {
    fn default() -> Self {
        Self { attack: TrunkActivationConfig::default(), seen: 100, unseen: 100, tasks: 5, epochs: 200, null_seeds: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct N1Settings {
    pub attack: N1Config,
    pub partners: usize,
    pub samples: usize,
    pub tasks: usize,
    pub batch_size: usize,
    /// Partner that leaves after `attack.window` of its epochs.
    pub leaving: u32,
}

impl Default for N1Settings {
    fn default() -> Self {
        Self { attack: N1Config::default(), partners: 5, samples: 100, tasks: 4, batch_size: 5, leaving: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Trials per NGMA evaluation inside sweeps.
    pub ngma_trials: usize,
    pub input_dropout: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub compression: Vec<CompressionPolicy>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let mut compression = vec![
            CompressionPolicy::None,
            CompressionPolicy::Threshold { tau: 0.001 },
            CompressionPolicy::Threshold { tau: 0.01 },
        ];
        for f in [0.2, 0.4, 0.6, 0.8] {
            compression.push(CompressionPolicy::TopK { fraction: f });
        }
        for f in [0.2, 0.4, 0.6, 0.8] {
            compression.push(CompressionPolicy::RandomSubset { fraction: f, seed: 0x5EB5E7 });
        }
        Self {
            ngma_trials: 40,
            input_dropout: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            batch_size: vec![1, 5, 25, 100],
            compression,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSweepSettings {
    pub sigmas: Vec<f64>,
    pub clip_norm: f64,
    pub delta: f64,
    pub epochs: u32,
}

impl Default for DpSweepSettings {
    fn default() -> Self {
        Self { sigmas: vec![0.0, 0.1, 0.5, 1.0, 2.0], clip_norm: 2.5, delta: 1.0 / 295_750.0, epochs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `None` picks the scenario's default.
    pub repetitions: Option<usize>,
    pub data: DatasetProfile,
    pub federation: FederationConfig,
    pub ngma: NgmaProtocolConfig,
    pub trunk_activation: TrunkActivationSettings,
    pub n1: N1Settings,
    pub sweeps: SweepSettings,
    pub dp_sweep: DpSweepSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            repetitions: None,
            data: DatasetProfile::default(),
            federation: FederationConfig {
                rounds: 200,
                clamp_batch: true,
                mask_payloads: false,
                ..FederationConfig::default()
            },
            ngma: NgmaProtocolConfig::default(),
            trunk_activation: TrunkActivationSettings::default(),
            n1: N1Settings::default(),
            sweeps: SweepSettings::default(),
            dp_sweep: DpSweepSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `text` over the defaults (tables merge key by key, other values
    /// replace), then applies `overrides` in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        let mut table = match toml::Value::try_from(Self::default()) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("defaults serialize to a table"),
        };
        merge_tables(&mut table, user);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == Some(0) {
            return Err(Error::config("repetitions must be at least 1"));
        }
        self.data.validate()?;
        self.federation.validate()?;
        self.ngma.validate()?;
        for c in &self.sweeps.compression {
            c.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets a dotted key in a TOML table. The value is parsed as a TOML value,
/// falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key {key:?} is malformed")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut at = table;
    for p in parents {
        let entry = at.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        at = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key:?} descends into a non-table")))?;
    }
    at.insert(last.to_string(), value);
    Ok(())
}
