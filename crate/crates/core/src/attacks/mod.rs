//! Membership and attribution inference attacks.

pub mod fisher;
pub mod forest;
pub mod n1;
pub mod ngma;
pub mod protocol;
pub mod trunk_activation;

use serde::{Deserialize, Serialize};

pub use fisher::{fisher_one_tailed, ContingencyTable};
pub use forest::{train_forest, AttackForest, ForestConfig};
pub use n1::{n1_attack, N1Config, N1Outcome, NgmaTap};
pub use ngma::{ngma, ngma_dense};
pub use protocol::{ngma_protocol, NgmaProtocolConfig, NgmaProtocolOutcome};
pub use trunk_activation::{attack_trunk, query_trunk, trunk_activation_attack, TrunkActivationConfig, TrunkActivationReport};

/// Binary membership decision with the score it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipVerdict {
    pub member: bool,
    pub score: f64,
}

/// Confusion counts with "member" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> AttackMetrics {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        AttackMetrics {
            confusion: *self,
            accuracy: ratio(self.tp + self.tn, self.total()).unwrap_or(f64::NAN),
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
        }
    }
}

/// Accuracy, precision and recall of an attack. Precision and recall are
/// `None` when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_metrics() {
        let mut c = Confusion::default();
        for (p, a) in [(true, true), (true, true), (true, false), (false, false)] {
            c.record(p, a);
        }
        let m = c.metrics();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.precision, Some(2.0 / 3.0));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(Confusion::default().metrics().precision, None);
    }
}
