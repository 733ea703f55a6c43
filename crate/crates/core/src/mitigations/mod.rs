//! Update-perturbation defenses: sparsifying compression, DP-SGD and its
//! privacy accountant.

pub mod accountant;
pub mod compression;
pub mod dp;

pub use accountant::{account_epsilon, epsilon_for, rdp_sampled_gaussian};
pub use compression::{apply_random_subset, apply_threshold, apply_topk, CompressionPolicy, PreparedCompression};
pub use dp::{clip_to_norm, dp_perturb, dp_perturb_sparse, DpPolicy};

/// `ceil(fraction * d)`, ignoring floating-point noise just above an integer.
pub(crate) fn ceil_count(fraction: f64, d: usize) -> usize {
    let x = fraction * d as f64;
    let r = x.round();
    let m = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) { r } else { x.ceil() };
    (m.max(0.0) as usize).min(d)
}
