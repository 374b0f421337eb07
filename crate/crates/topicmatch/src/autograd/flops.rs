//! Multiply-accumulate accounting.
//!
//! Counts are pure functions of operand shapes, so two runs over the same
//! shapes always report identical numbers regardless of values or timing.

use std::collections::BTreeMap;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    total: u64,
    breakdown: BTreeMap<String, u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, label: &str, macs: u64) {
        if macs == 0 {
            return;
        }
        self.total += macs;
        *self.breakdown.entry(label.to_string()).or_insert(0) += macs;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn breakdown(&self) -> &BTreeMap<String, u64> {
        &self.breakdown
    }

    pub fn get(&self, label: &str) -> u64 {
        self.breakdown.get(label).copied().unwrap_or(0)
    }

    /// Sum of all entries whose label starts with `prefix`.
    pub fn prefixed(&self, prefix: &str) -> u64 {
        self.breakdown
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        for (k, v) in &other.breakdown {
            self.add(k, *v);
        }
    }

    /// `self - earlier`, assuming `earlier` is a prior snapshot of this counter.
    pub fn since(&self, earlier: &FlopCounter) -> FlopCounter {
        let mut out = FlopCounter::new();
        for (k, v) in &self.breakdown {
            let before = earlier.get(k);
            if *v > before {
                out.add(k, v - before);
            }
        }
        out
    }
}
