//! Gradient zero-pattern membership test.
//!
//! A trunk weight row `i` receives a non-zero gradient only if input `i` was
//! active for some sample in the batch. The test declares a target a member
//! when every one of its active rows has non-zero gradient in more than a
//! `majority` fraction of the hidden columns.

use crate::dataset::Fingerprint;
use crate::error::{Error, Result};
use crate::nn::TrunkGradient;

use super::MembershipVerdict;

fn check_majority(majority: f64) -> Result<()> {
    if !(0.0..1.0).contains(&majority) {
        return Err(Error::config(format!("majority {majority} outside [0, 1)")));
    }
    Ok(())
}

fn verdict(fractions: impl Iterator<Item = f64>, majority: f64) -> MembershipVerdict {
    let mut score = f64::INFINITY;
    let mut member = true;
    for f in fractions {
        score = score.min(f);
        member &= f > majority;
    }
    MembershipVerdict { member, score: if score.is_finite() { score } else { 0.0 } }
}

/// Runs the test against a row-sparse aggregate. The score is the smallest
/// per-row fraction of non-zero columns.
pub fn ngma(aggregate: &TrunkGradient, target: &Fingerprint, majority: f64) -> Result<MembershipVerdict> {
    check_majority(majority)?;
    if target.n() != aggregate.input_dim() {
        return Err(Error::dimension(format!(
            "target has n={}, gradient has n={}",
            target.n(),
            aggregate.input_dim()
        )));
    }
    let h = aggregate.hidden() as f64;
    let fractions = target.indices().iter().map(|&i| match aggregate.row(i) {
        Some(row) => row.iter().filter(|v| **v != 0.0).count() as f64 / h,
        None => 0.0,
    });
    Ok(verdict(fractions, majority))
}

/// Same test over a dense row-major `n x h` weight gradient.
pub fn ngma_dense(dw1: &[f64], n: usize, h: usize, target: &Fingerprint, majority: f64) -> Result<MembershipVerdict> {
    check_majority(majority)?;
    if dw1.len() != n * h || target.n() != n || h == 0 {
        return Err(Error::dimension(format!("gradient of length {} is not {n} x {h}", dw1.len())));
    }
    let fractions = target
        .indices()
        .iter()
        .map(|&i| dw1[i as usize * h..(i as usize + 1) * h].iter().filter(|v| **v != 0.0).count() as f64 / h as f64);
    Ok(verdict(fractions, majority))
}
