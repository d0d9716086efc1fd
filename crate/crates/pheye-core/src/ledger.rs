//! Multiplication accounting. Every matrix product of an (n x d) operand
//! with a (d x o) operand charges exactly n*o*d multiplications to one
//! category; element-wise work (activations, normalization, softmax,
//! scaling) is never counted.

use std::cell::Cell;
use std::fmt;

/// Where a matmul's multiplications are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MulCategory {
    /// Q/K/V/O maps in self- or cross-attention.
    Projection,
    /// The query-key score product.
    AttentionScores,
    /// The probability-value product (counted, reported separately).
    AttentionValues,
    /// Both halves of a feed-forward block.
    FeedForward,
    /// Everything outside the per-layer transformer accounting:
    /// patch embedding, unembedding, LoRA branches, external projectors.
    Other,
}

impl MulCategory {
    pub const ALL: [MulCategory; 5] = [
        MulCategory::Projection,
        MulCategory::AttentionScores,
        MulCategory::AttentionValues,
        MulCategory::FeedForward,
        MulCategory::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MulCategory::Projection => "projection",
            MulCategory::AttentionScores => "attention_scores",
            MulCategory::AttentionValues => "attention_values",
            MulCategory::FeedForward => "feedforward",
            MulCategory::Other => "other",
        }
    }
}

/// Per-category multiplication tallies for one run.
///
/// Counters use interior mutability so a ledger can be threaded through a
/// forward pass as a shared reference. A ledger is confined to one thread;
/// tallies from concurrent runs are combined with [`MulLedger::merge`].
#[derive(Debug, Default)]
pub struct MulLedger {
    projection: Cell<u128>,
    attention_scores: Cell<u128>,
    attention_values: Cell<u128>,
    feedforward: Cell<u128>,
    other: Cell<u128>,
}

impl MulLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn cell(&self, category: MulCategory) -> &Cell<u128> {
        match category {
            MulCategory::Projection => &self.projection,
            MulCategory::AttentionScores => &self.attention_scores,
            MulCategory::AttentionValues => &self.attention_values,
            MulCategory::FeedForward => &self.feedforward,
            MulCategory::Other => &self.other,
        }
    }

    /// Charge one matmul of shape (n x d) * (d x o).
    pub fn charge(&self, category: MulCategory, n: usize, d: usize, o: usize) {
        let cost = n as u128 * d as u128 * o as u128;
        let cell = self.cell(category);
        cell.set(cell.get() + cost);
    }

    pub fn get(&self, category: MulCategory) -> u128 {
        self.cell(category).get()
    }

    pub fn total(&self) -> u128 {
        MulCategory::ALL.iter().map(|&c| self.get(c)).sum()
    }

    /// Total under the accounting convention of the analytic formulas:
    /// projections, the attention score product, and feed-forward blocks.
    /// The value product and everything in `other` are excluded.
    pub fn paper_total(&self) -> u128 {
        self.get(MulCategory::Projection)
            + self.get(MulCategory::AttentionScores)
            + self.get(MulCategory::FeedForward)
    }

    pub fn reset(&self) {
        for c in MulCategory::ALL {
            self.cell(c).set(0);
        }
    }

    /// Fold another ledger's tallies into this one.
    pub fn merge(&self, other: &MulLedger) {
        for c in MulCategory::ALL {
            let cell = self.cell(c);
            cell.set(cell.get() + other.get(c));
        }
    }

    pub fn snapshot(&self) -> Vec<(MulCategory, u128)> {
        MulCategory::ALL.iter().map(|&c| (c, self.get(c))).collect()
    }
}

impl fmt::Display for MulLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in MulCategory::ALL {
            writeln!(f, "{:>18}: {}", c.name(), self.get(c))?;
        }
        write!(f, "{:>18}: {}", "total", self.total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_sum_of_categories() {
        let ledger = MulLedger::new();
        ledger.charge(MulCategory::Projection, 2, 3, 4);
        ledger.charge(MulCategory::FeedForward, 5, 6, 7);
        ledger.charge(MulCategory::AttentionScores, 1, 1, 1);
        assert_eq!(ledger.total(), 24 + 210 + 1);
        assert_eq!(
            ledger.total(),
            MulCategory::ALL.iter().map(|&c| ledger.get(c)).sum::<u128>()
        );
    }

    #[test]
    fn paper_total_excludes_values_and_other() {
        let ledger = MulLedger::new();
        ledger.charge(MulCategory::Projection, 2, 2, 2);
        ledger.charge(MulCategory::AttentionValues, 10, 10, 10);
        ledger.charge(MulCategory::Other, 7, 7, 7);
        assert_eq!(ledger.paper_total(), 8);
        assert_eq!(ledger.total(), 8 + 1000 + 343);
    }

    #[test]
    fn merge_adds_per_category() {
        let a = MulLedger::new();
        let b = MulLedger::new();
        a.charge(MulCategory::Projection, 1, 2, 3);
        b.charge(MulCategory::Projection, 4, 5, 6);
        b.charge(MulCategory::Other, 1, 1, 2);
        a.merge(&b);
        assert_eq!(a.get(MulCategory::Projection), 6 + 120);
        assert_eq!(a.get(MulCategory::Other), 2);
    }
}
