use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrunkGradient;
use crate::rng::{self, tag};

use super::ceil_count;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressionPolicy {
    #[default]
    None,
    /// Zero every coordinate with `|g| < tau`.
    Threshold { tau: f64 },
    /// Keep the `ceil(fraction * d)` largest-magnitude coordinates.
    TopK { fraction: f64 },
    /// Keep a pseudorandom subset of `ceil(fraction * d)` coordinates chosen
    /// from `(seed, round)` alone, so every partner keeps the same subset.
    RandomSubset { fraction: f64, seed: u64 },
}

impl CompressionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CompressionPolicy::None => Ok(()),
            CompressionPolicy::Threshold { tau } if tau >= 0.0 && tau.is_finite() => Ok(()),
            CompressionPolicy::TopK { fraction } | CompressionPolicy::RandomSubset { fraction, .. }
                if fraction > 0.0 && fraction <= 1.0 =>
            {
                Ok(())
            }
            ref p => Err(Error::config(format!("invalid compression policy {p:?}"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            CompressionPolicy::None => "none".into(),
            CompressionPolicy::Threshold { tau } => format!("threshold={tau}"),
            CompressionPolicy::TopK { fraction } => format!("topk={fraction}"),
            CompressionPolicy::RandomSubset { fraction, .. } => format!("random_subset={fraction}"),
        }
    }

    /// Precomputes per-round state (the shared random subset) for vectors of
    /// length `d`.
    pub fn prepare(&self, d: usize, round: u64) -> PreparedCompression {
        let keep = match *self {
            CompressionPolicy::RandomSubset { fraction, seed } => Some(subset_bitmap(d, fraction, seed, round)),
            _ => None,
        };
        PreparedCompression { policy: self.clone(), d, keep }
    }

    pub fn apply(&self, g: &[f64], round: u64) -> Vec<f64> {
        match *self {
            CompressionPolicy::None => g.to_vec(),
            CompressionPolicy::Threshold { tau } => apply_threshold(g, tau),
            CompressionPolicy::TopK { fraction } => apply_topk(g, fraction),
            CompressionPolicy::RandomSubset { fraction, seed } => apply_random_subset(g, fraction, seed, round),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedCompression {
    policy: CompressionPolicy,
    d: usize,
    keep: Option<Vec<u64>>,
}

impl PreparedCompression {
    /// Applies the policy in place to the materialized coordinates of a
    /// row-sparse gradient. Equivalent to [`CompressionPolicy::apply`] on the
    /// dense vector.
    pub fn apply_sparse(&self, g: &mut TrunkGradient) -> Result<()> {
        if g.len() != self.d {
            return Err(Error::dimension(format!("prepared for length {}, got {}", self.d, g.len())));
        }
        match self.policy {
            CompressionPolicy::None => {}
            CompressionPolicy::Threshold { tau } => g.map_coords(|_, v| if v.abs() < tau { 0.0 } else { v }),
            CompressionPolicy::TopK { fraction } => {
                let m = ceil_count(fraction, self.d);
                let mut nz: Vec<(usize, f64)> = g.coords().filter(|&(_, v)| v != 0.0).collect();
                if nz.len() > m {
                    let keep = top_indices(&mut nz, m);
                    g.map_coords(|i, v| if keep.binary_search(&i).is_ok() { v } else { 0.0 });
                }
            }
            CompressionPolicy::RandomSubset { .. } => {
                let bits = self.keep.as_ref().expect("prepared subset");
                g.map_coords(|i, v| if bits[i / 64] >> (i % 64) & 1 == 1 { v } else { 0.0 });
            }
        }
        Ok(())
    }
}

/// Sorted flat indices of the `m` largest `|v|`, ties to the lower index.
fn top_indices(nz: &mut [(usize, f64)], m: usize) -> Vec<usize> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0));
    if m == 0 {
        return Vec::new();
    }
    if m < nz.len() {
        nz.select_nth_unstable_by(m - 1, cmp);
    }
    let mut keep: Vec<usize> = nz[..m.min(nz.len())].iter().map(|&(i, _)| i).collect();
    keep.sort_unstable();
    keep
}

pub fn apply_threshold(g: &[f64], tau: f64) -> Vec<f64> {
    g.iter().map(|&v| if v.abs() < tau { 0.0 } else { v }).collect()
}

pub fn apply_topk(g: &[f64], fraction: f64) -> Vec<f64> {
    let m = ceil_count(fraction, g.len());
    let mut all: Vec<(usize, f64)> = g.iter().copied().enumerate().collect();
    let keep = top_indices(&mut all, m);
    let mut out = vec![0.0; g.len()];
    for i in keep {
        out[i] = g[i];
    }
    out
}

/// Sorted indices of the shared random subset for `(seed, round)`.
pub fn random_subset_indices(d: usize, fraction: f64, seed: u64, round: u64) -> Vec<usize> {
    let mut idx = subset_unsorted(d, fraction, seed, round);
    idx.sort_unstable();
    idx
}

fn subset_unsorted(d: usize, fraction: f64, seed: u64, round: u64) -> Vec<usize> {
    let mut r = rng::derive(seed, &[tag::SUBSET, round]);
    rand::seq::index::sample(&mut r, d, ceil_count(fraction, d)).into_vec()
}

fn subset_bitmap(d: usize, fraction: f64, seed: u64, round: u64) -> Vec<u64> {
    let mut bits = vec![0u64; d.div_ceil(64)];
    for i in subset_unsorted(d, fraction, seed, round) {
        bits[i / 64] |= 1 << (i % 64);
    }
    bits
}

pub fn apply_random_subset(g: &[f64], fraction: f64, seed: u64, round: u64) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in random_subset_indices(g.len(), fraction, seed, round) {
        out[i] = g[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_examples() {
        assert_eq!(apply_threshold(&[0.5, -0.0005, 0.002], 0.001), vec![0.5, 0.0, 0.002]);
        assert_eq!(apply_threshold(&[0.5, -1e-9, 0.0], 0.0), vec![0.5, -1e-9, 0.0]);
    }

    #[test]
    fn topk_examples() {
        assert_eq!(apply_topk(&[0.5, -0.9, 0.1, 0.0], 0.5), vec![0.5, -0.9, 0.0, 0.0]);
        let g = [0.3, -0.1, 0.7];
        assert_eq!(apply_topk(&g, 1.0), g.to_vec());
        // ties go to the lower index
        assert_eq!(apply_topk(&[0.2, -0.2, 0.2], 0.34), vec![0.2, -0.2, 0.0]);
    }

    #[test]
    fn random_subset_examples() {
        let g: Vec<f64> = (1..=50).map(f64::from).collect();
        assert_eq!(apply_random_subset(&g, 1.0, 3, 0), g);
        let a = apply_random_subset(&g, 0.4, 3, 7);
        let b = apply_random_subset(&g.iter().map(|v| -v).collect::<Vec<_>>(), 0.4, 3, 7);
        let sa: Vec<bool> = a.iter().map(|&v| v != 0.0).collect();
        let sb: Vec<bool> = b.iter().map(|&v| v != 0.0).collect();
        assert_eq!(sa, sb);
        assert_eq!(sa.iter().filter(|&&x| x).count(), 20);
    }

    #[test]
    fn random_subsets_change_across_rounds() {
        let d = 10_000;
        let f = 0.3;
        let a = random_subset_indices(d, f, 11, 1);
        let b = random_subset_indices(d, f, 11, 2);
        assert_ne!(a, b);
        let overlap = a.iter().filter(|i| b.binary_search(i).is_ok()).count() as f64;
        // hypergeometric overlap: mean m^2/d, sd about sqrt(m^2/d * (1-f)^2)
        let m = (f * d as f64).ceil();
        let mean = m * m / d as f64;
        let sd = (mean * (1.0 - f) * (1.0 - f)).sqrt();
        assert!((overlap - mean).abs() < 5.0 * sd, "overlap {overlap} vs {mean}");
    }

    #[test]
    fn policy_validation() {
        assert!(CompressionPolicy::TopK { fraction: 0.0 }.validate().is_err());
        assert!(CompressionPolicy::TopK { fraction: 1.5 }.validate().is_err());
        assert!(CompressionPolicy::Threshold { tau: -1.0 }.validate().is_err());
        assert!(CompressionPolicy::RandomSubset { fraction: 0.5, seed: 1 }.validate().is_ok());
    }

    fn sparse_grad(n: usize, h: usize, vals: &[f64]) -> TrunkGradient {
        let rows: Vec<(u32, Vec<f64>)> = vals
            .chunks(h)
            .take(n)
            .enumerate()
            .filter(|(i, _)| i % 3 != 1)
            .map(|(i, r)| (i as u32, r.to_vec()))
            .collect();
        TrunkGradient::from_rows(n, h, rows, vals[vals.len() - h..].to_vec()).unwrap()
    }

    fn policies() -> impl Strategy<Value = CompressionPolicy> {
        prop_oneof![
            Just(CompressionPolicy::None),
            (0.0f64..0.5).prop_map(|tau| CompressionPolicy::Threshold { tau }),
            (0.01f64..=1.0).prop_map(|fraction| CompressionPolicy::TopK { fraction }),
            (0.01f64..=1.0, any::<u64>()).prop_map(|(fraction, seed)| CompressionPolicy::RandomSubset { fraction, seed }),
        ]
    }

    proptest! {
        #[test]
        fn support_shrinking_and_idempotent(
            g in prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 1..200),
            policy in policies(),
            round in 0u64..1000,
        ) {
            let once = policy.apply(&g, round);
            for (o, x) in once.iter().zip(&g) {
                prop_assert!(*o == 0.0 || o == x);
            }
            prop_assert_eq!(policy.apply(&once, round), once.clone());
            if let CompressionPolicy::TopK { fraction } = policy {
                let m = ceil_count(fraction, g.len());
                let nz = g.iter().filter(|&&v| v != 0.0).count();
                let kept = once.iter().filter(|&&v| v != 0.0).count();
                prop_assert_eq!(kept, m.min(nz));
            }
        }

        #[test]
        fn sparse_matches_dense(
            vals in prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 6 * 4 + 4),
            policy in policies(),
            round in 0u64..100,
        ) {
            let g = sparse_grad(6, 4, &vals);
            let dense = g.to_dense();
            let mut s = g.clone();
            policy.prepare(g.len(), round).apply_sparse(&mut s).unwrap();
            prop_assert_eq!(s.to_dense(), policy.apply(&dense, round));
        }
    }
}
