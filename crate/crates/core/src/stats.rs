//! Small descriptive-statistics helpers shared by feature extraction and
//! aggregation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// max, min, mean, median and population variance of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub var: f64,
}

impl Summary {
    /// All-zero summary for an empty sample.
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = mean(&sorted);
        Summary {
            max: sorted[sorted.len() - 1],
            min: sorted[0],
            mean,
            median: median_sorted(&sorted),
            var: sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sorted.len() as f64,
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Median of an already sorted slice; mean of the two middle values for even
/// lengths.
pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    median_sorted(&sorted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_two() {
        let s = Summary::of(&[200.0, 100.0]);
        assert_eq!(s, Summary { max: 200.0, min: 100.0, mean: 150.0, median: 150.0, var: 2500.0 });
    }

    #[test]
    fn summary_degenerate() {
        assert_eq!(Summary::of(&[]), Summary::default());
        let s = Summary::of(&[80.0]);
        assert_eq!((s.var, s.median, s.mean), (0.0, 80.0, 80.0));
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
