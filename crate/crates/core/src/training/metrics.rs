use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};

/// Boundary-class confusion counts and the derived scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Scores with the zero-denominator convention: any undefined ratio is 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { tp, fp, fn_, precision, recall, f1 }
    }

    /// Counts over the positive class for one sequence of labels.
    pub fn count(gold: &[u8], predicted: &[u8]) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&g, &p) in gold.iter().zip(predicted) {
            match (g, p) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (1, 0) => fn_ += 1,
                _ => {}
            }
        }
        Self::from_counts(tp, fp, fn_)
    }

    pub fn summary(&self) -> String {
        format!("precision={:.4}, recall={:.4}, f1={:.4}", self.precision, self.recall, self.f1)
    }
}

impl Add for Metrics {
    type Output = Metrics;

    fn add(self, o: Metrics) -> Metrics {
        Metrics::from_counts(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl Sum for Metrics {
    fn sum<I: Iterator<Item = Metrics>>(iter: I) -> Metrics {
        iter.fold(Metrics::default(), Add::add)
    }
}
