//! Python bindings for the fedleak simulator.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fedleak::attacks::{self, ContingencyTable};
use fedleak::dataset::{self, DatasetProfile, Fingerprint, PartnerDataset};
use fedleak::federation::{self, FederationConfig};
use fedleak::harness::{self, ExperimentConfig, Scenario};
use fedleak::mitigations;
use fedleak::nn::TrunkParams;
use fedleak::secure_agg::{self, MaskKeyring};

fn to_py(e: fedleak::Error) -> PyErr {
    match e {
        fedleak::Error::Dimension(_) => PyValueError::new_err(e.to_string()),
        e if e.is_configuration() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_toml<T: serde::de::DeserializeOwned + Default>(text: Option<&str>, what: &str) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => toml::from_str(t).map_err(|e| PyValueError::new_err(format!("{what}: {e}"))),
    }
}

/// Partner datasets of a federation.
#[pyclass(module = "fedleak_py", frozen)]
struct Dataset {
    partners: Vec<PartnerDataset>,
}

#[pymethods]
impl Dataset {
    /// Generates synthetic partners. `profile` is a TOML document of profile
    /// keys; omitted keys keep their defaults.
    #[staticmethod]
    #[pyo3(signature = (seed, profile=None))]
    fn generate(seed: u64, profile: Option<&str>) -> PyResult<Self> {
        let profile: DatasetProfile = parse_toml(profile, "profile")?;
        Ok(Self { partners: dataset::generate(&profile, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { partners: dataset::load(path).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_fps(text: &str) -> PyResult<Self> {
        Ok(Self { partners: dataset::parse_fps(text).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dataset::save(&self.partners, path).map_err(to_py)
    }

    fn to_fps(&self) -> PyResult<String> {
        dataset::to_fps_string(&self.partners).map_err(to_py)
    }

    fn partner_ids(&self) -> Vec<u32> {
        self.partners.iter().map(|p| p.partner_id).collect()
    }

    fn partner_sizes(&self) -> Vec<usize> {
        self.partners.iter().map(|p| p.len()).collect()
    }

    fn input_dim(&self) -> Option<usize> {
        self.partners.iter().find_map(|p| p.input_dim())
    }

    /// `(sample_id, active indices, [(task, label)])` for each sample of the
    /// partner at position `index`.
    fn samples(&self, index: usize) -> PyResult<Vec<(u64, Vec<u32>, Vec<(u32, u8)>)>> {
        let p = self.partners.get(index).ok_or_else(|| PyValueError::new_err("partner index out of range"))?;
        Ok(p.samples.iter().map(|s| (s.sample_id, s.fingerprint.indices().to_vec(), s.labels.clone())).collect())
    }

    fn __len__(&self) -> usize {
        self.partners.len()
    }
}

/// A trained shared trunk.
#[pyclass(module = "fedleak_py", frozen)]
struct Trunk {
    params: TrunkParams,
}

#[pymethods]
impl Trunk {
    #[getter]
    fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.params.hidden()
    }

    /// Eval-mode hidden activations for a fingerprint given by its indices.
    fn activations(&self, indices: Vec<u32>) -> PyResult<Vec<f64>> {
        let fp = Fingerprint::from_unsorted(indices, self.params.input_dim()).map_err(to_py)?;
        self.params.activations(&fp).map_err(to_py)
    }

    /// `(w1, b1)` with `w1` flattened row-major `n x h`.
    fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        (self.params.w1().to_vec(), self.params.b1().to_vec())
    }
}

/// Trains a federation. `config` is a TOML document of federation keys.
/// Returns the trunk and the per-round mean loss.
#[pyfunction]
#[pyo3(signature = (data, seed, config=None))]
fn run_federation(data: &Dataset, seed: u64, config: Option<&str>) -> PyResult<(Trunk, Vec<f64>)> {
    let cfg: FederationConfig = parse_toml(config, "federation config")?;
    let out = federation::run(&data.partners, &cfg, seed, &mut ()).map_err(to_py)?;
    Ok((Trunk { params: out.trunk }, out.metrics.iter().map(|m| m.loss).collect()))
}

/// Zero-pattern membership test on a dense `n x h` first-layer gradient.
/// Returns `(member, score)`.
#[pyfunction]
#[pyo3(signature = (dw1, n, h, target, majority=0.5))]
fn ngma(dw1: Vec<f64>, n: usize, h: usize, target: Vec<u32>, majority: f64) -> PyResult<(bool, f64)> {
    let fp = Fingerprint::from_unsorted(target, n).map_err(to_py)?;
    let v = attacks::ngma_dense(&dw1, n, h, &fp, majority).map_err(to_py)?;
    Ok((v.member, v.score))
}

#[pyfunction]
fn fisher_one_tailed(a: u64, b: u64, c: u64, d: u64) -> f64 {
    attacks::fisher_one_tailed(ContingencyTable::new(a, b, c, d))
}

#[pyfunction]
fn combine_likelihood(accuracies: Vec<f64>) -> f64 {
    harness::combine_likelihood(&accuracies)
}

#[pyfunction]
fn compress_threshold(g: Vec<f64>, tau: f64) -> Vec<f64> {
    mitigations::apply_threshold(&g, tau)
}

#[pyfunction]
fn compress_topk(g: Vec<f64>, fraction: f64) -> Vec<f64> {
    mitigations::apply_topk(&g, fraction)
}

#[pyfunction]
fn compress_random_subset(g: Vec<f64>, fraction: f64, seed: u64, round: u64) -> Vec<f64> {
    mitigations::apply_random_subset(&g, fraction, seed, round)
}

/// Epsilon of `steps` subsampled Gaussian steps; infinite when `sigma == 0`.
#[pyfunction]
fn account_epsilon(sample_rate: f64, sigma: f64, steps: u64, delta: f64) -> PyResult<f64> {
    if !(sample_rate > 0.0 && sample_rate <= 1.0) || !(delta > 0.0 && delta < 1.0) || sigma < 0.0 {
        return Err(PyValueError::new_err("need 0 < sample_rate <= 1, 0 < delta < 1 and sigma >= 0"));
    }
    Ok(mitigations::epsilon_for(sample_rate, sigma, steps, delta))
}

/// Masks each update for the roster `0..len(updates)`, aggregates the masked
/// payloads and returns the decoded sum.
#[pyfunction]
#[pyo3(signature = (updates, round, seed, group_mask=false))]
fn secure_sum(updates: Vec<Vec<f64>>, round: u32, seed: u64, group_mask: bool) -> PyResult<Vec<f64>> {
    let roster: Vec<u32> = (0..updates.len() as u32).collect();
    let keys = MaskKeyring::deal(&roster, group_mask, seed);
    let messages = roster
        .iter()
        .zip(&updates)
        .map(|(&p, u)| secure_agg::mask(u, p, round, &keys.for_partner(p), &roster))
        .collect::<fedleak::Result<Vec<_>>>()
        .map_err(to_py)?;
    let agg = secure_agg::aggregate_round(&messages, &roster).map_err(to_py)?;
    Ok(secure_agg::unblind(&agg, keys.group_seed(), round, roster.len()))
}

/// Runs a named scenario and returns its report as JSON text.
#[pyfunction]
#[pyo3(signature = (scenario, seed, config="", overrides=Vec::new()))]
fn run_scenario(py: Python<'_>, scenario: &str, seed: u64, config: &str, overrides: Vec<String>) -> PyResult<String> {
    let scenario: Scenario = scenario.parse().map_err(to_py)?;
    let cfg = ExperimentConfig::from_toml(config, &overrides).map_err(to_py)?;
    let report = py.detach(|| harness::run_scenario(scenario, &cfg, seed, None)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    Scenario::ALL.iter().map(|s| s.name()).collect()
}

#[pymodule]
mod fedleak_py {
    #[pymodule_export]
    use super::{
        account_epsilon, combine_likelihood, compress_random_subset, compress_threshold, compress_topk, fisher_one_tailed,
        ngma, run_federation, run_scenario, scenarios, secure_sum, Dataset, Trunk,
    };
}
