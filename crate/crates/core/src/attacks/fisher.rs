//! One-tailed Fisher exact test on 2x2 tables.

use serde::{Deserialize, Serialize};

/// `a` = positive before, `b` = negative before, `c` = positive after,
/// `d` = negative after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut t = Vec::with_capacity(n as usize + 1);
    t.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

/// Probability of a first cell at least as large as `a` among tables with
/// the same margins (the alternative being "more positives before").
pub fn fisher_one_tailed(t: ContingencyTable) -> f64 {
    let row1 = t.a + t.b;
    let row2 = t.c + t.d;
    let col1 = t.a + t.c;
    let n = t.total();
    let hi = row1.min(col1);
    if n == 0 || t.a == col1.saturating_sub(row2) {
        return 1.0;
    }
    let lf = ln_factorials(n);
    let ln_choose = |m: u64, k: u64| lf[m as usize] - lf[k as usize] - lf[(m - k) as usize];
    let denom = ln_choose(n, col1);
    let terms: Vec<f64> = (t.a..=hi).map(|x| ln_choose(row1, x) + ln_choose(row2, col1 - x) - denom).collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p = top.exp() * terms.iter().map(|x| (x - top).exp()).sum::<f64>();
    p.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_tables() {
        assert_eq!(fisher_one_tailed(ContingencyTable::new(0, 30, 0, 30)), 1.0);
        assert_eq!(fisher_one_tailed(ContingencyTable::new(0, 0, 0, 0)), 1.0);
        assert_eq!(fisher_one_tailed(ContingencyTable::new(0, 0, 3, 4)), 1.0);
    }

    #[test]
    fn small_table_by_hand() {
        // margins 3/3, 3 positives: P(a>=2) = (9 + 1) / 20
        let p = fisher_one_tailed(ContingencyTable::new(2, 1, 1, 2));
        assert!((p - 0.5).abs() < 1e-14);
    }

    #[test]
    fn symmetric_table_upper_half() {
        let p = fisher_one_tailed(ContingencyTable::new(15, 15, 15, 15));
        assert!(p > 0.5 && p < 0.7);
    }
}
