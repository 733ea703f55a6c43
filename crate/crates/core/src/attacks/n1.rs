//! Attribution by composition change: compare how often the membership test
//! fires per epoch before and after one partner leaves.

use serde::{Deserialize, Serialize};

use crate::dataset::Fingerprint;
use crate::error::{Error, Result};
use crate::federation::{RoundObserver, RoundRecord, RoundTruth};

use super::fisher::{fisher_one_tailed, ContingencyTable};
use super::ngma::ngma;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct N1Config {
    /// Epochs compared on each side of the leave round.
    pub window: u32,
    pub alpha: f64,
    pub majority: f64,
}

impl Default for N1Config {
    fn default() -> Self {
        Self { window: 30, alpha: 0.01, majority: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct N1Outcome {
    pub table: ContingencyTable,
    pub p_value: f64,
    /// `p_value < alpha`: the target is attributed to the leaving partner.
    pub attributed: bool,
}

/// Records one NGMA verdict per round for each target.
#[derive(Debug, Clone)]
pub struct NgmaTap {
    targets: Vec<Fingerprint>,
    majority: f64,
    verdicts: Vec<Vec<(u32, bool)>>,
}

impl NgmaTap {
    pub fn new(targets: Vec<Fingerprint>, majority: f64) -> Self {
        let verdicts = vec![Vec::new(); targets.len()];
        Self { targets, majority, verdicts }
    }

    /// `(round, member)` pairs for target `k`.
    pub fn verdicts(&self, k: usize) -> &[(u32, bool)] {
        &self.verdicts[k]
    }
}

impl RoundObserver for NgmaTap {
    fn on_round(&mut self, record: &RoundRecord, _: &RoundTruth) -> Result<()> {
        for (t, out) in self.targets.iter().zip(&mut self.verdicts) {
            out.push((record.round, ngma(&record.aggregate, t, self.majority)?.member));
        }
        Ok(())
    }
}

/// Positive-epoch flags for `count` consecutive epochs of `epoch_rounds`
/// rounds starting at `start`. Missing rounds count as negative.
fn epoch_flags(verdicts: &[(u32, bool)], start: u32, epoch_rounds: u32, count: u32) -> Vec<bool> {
    let mut flags = vec![false; count as usize];
    let end = start + epoch_rounds * count;
    for &(r, m) in verdicts {
        if m && (start..end).contains(&r) {
            flags[((r - start) / epoch_rounds) as usize] = true;
        }
    }
    flags
}

/// Builds the before/after table from per-round verdicts and tests it.
pub fn n1_attack(verdicts: &[(u32, bool)], leave_round: u32, epoch_rounds: u32, config: &N1Config) -> Result<N1Outcome> {
    if epoch_rounds == 0 || config.window == 0 {
        return Err(Error::config("epoch length and window must be positive"));
    }
    let span = epoch_rounds
        .checked_mul(config.window)
        .ok_or_else(|| Error::attack("window overflows the round counter"))?;
    let last = verdicts.iter().map(|v| v.0).max();
    if leave_round < span || last.is_none_or(|l| l + 1 < leave_round + span) {
        return Err(Error::attack(format!(
            "a window of {} epochs ({span} rounds) on each side of round {leave_round} exceeds the observed rounds",
            config.window
        )));
    }
    let before = epoch_flags(verdicts, leave_round - span, epoch_rounds, config.window);
    let after = epoch_flags(verdicts, leave_round, epoch_rounds, config.window);
    let pos = |f: &[bool]| f.iter().filter(|&&b| b).count() as u64;
    let w = u64::from(config.window);
    let table = ContingencyTable::new(pos(&before), w - pos(&before), pos(&after), w - pos(&after));
    let p_value = fisher_one_tailed(table);
    Ok(N1Outcome { table, p_value, attributed: p_value < config.alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_from_verdicts() {
        // epochs of 2 rounds, leave at round 6, window 3
        let v: Vec<(u32, bool)> = (0..12).map(|r| (r, matches!(r, 0 | 3 | 5 | 9))).collect();
        let cfg = N1Config { window: 3, ..N1Config::default() };
        let out = n1_attack(&v, 6, 2, &cfg).unwrap();
        assert_eq!(out.table, ContingencyTable::new(3, 0, 1, 2));
    }

    #[test]
    fn window_must_fit() {
        let v: Vec<(u32, bool)> = (0..100).map(|r| (r, true)).collect();
        let cfg = N1Config::default();
        assert!(matches!(n1_attack(&v, 0, 1, &cfg), Err(Error::Attack(_))));
        assert!(n1_attack(&v, 50, 2, &cfg).is_err());
        assert!(n1_attack(&v, 30, 1, &cfg).is_ok());
    }
}
