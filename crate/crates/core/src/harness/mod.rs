//! Experiment scenarios, risk combination and report emission.

pub mod config;
pub mod report;
pub mod scenario;

pub use config::{apply_override, ExperimentConfig};
pub use report::{emit, rows_from_csv, rows_to_csv, Format, Report, RunRow};
pub use scenario::{n1_run, run_scenario, untrained_trunk_null, N1Run, Scenario};

/// Probability that at least one of several independent attacks succeeds:
/// `1 - prod(1 - a_i)`.
pub fn combine_likelihood(accuracies: &[f64]) -> f64 {
    1.0 - accuracies.iter().map(|a| 1.0 - a).product::<f64>()
}
