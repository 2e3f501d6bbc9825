//! Report length distribution.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Words are whitespace-separated chunks, punctuation included.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Summary of a corpus's word counts. The histogram maps exact counts to
/// how many reports have them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    pub min: usize,
    pub max: usize,
    pub histogram: BTreeMap<usize, usize>,
}

impl LengthStats {
    fn empty() -> Self {
        Self {
            count: 0,
            mean: 0.0,
            median: 0.0,
            stddev: 0.0,
            min: 0,
            max: 0,
            histogram: BTreeMap::new(),
        }
    }
}

/// Word-count statistics over a corpus. Standard deviation is the
/// population form (divide by n).
pub fn length_stats<'a, I>(texts: I) -> LengthStats
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: Vec<usize> = texts.into_iter().map(word_count).collect();
    if counts.is_empty() {
        return LengthStats::empty();
    }
    counts.sort_unstable();

    let n = counts.len();
    let sum: usize = counts.iter().sum();
    let mean = sum as f64 / n as f64;
    let median = if n % 2 == 1 {
        counts[n / 2] as f64
    } else {
        (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
    };
    let variance = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;

    let mut histogram = BTreeMap::new();
    for &c in &counts {
        *histogram.entry(c).or_insert(0usize) += 1;
    }

    LengthStats {
        count: n,
        mean,
        median,
        stddev: variance.sqrt(),
        min: counts[0],
        max: counts[n - 1],
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_count_splits_on_whitespace() {
        assert_eq!(word_count("No acute disease."), 3);
        assert_eq!(word_count("  spaced   out\ttokens \n here "), 4);
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("   "), 0);
    }

    #[test]
    fn hand_computed_stats() {
        let stats = length_stats(["a b c", "a", "a b"]);
        assert_eq!(stats.count, 3);
        assert!((stats.mean - 2.0).abs() < 1e-12);
        assert_eq!(stats.median, 2.0);
        // Population variance of {1,2,3} is 2/3.
        assert!((stats.stddev - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((stats.min, stats.max), (1, 3));
        assert_eq!(stats.histogram, BTreeMap::from([(1, 1), (2, 1), (3, 1)]));
    }

    #[test]
    fn even_count_median_averages_middle_pair() {
        let stats = length_stats(["a", "a b", "a b c", "a b c d"]);
        assert_eq!(stats.median, 2.5);
    }

    #[test]
    fn empty_corpus_is_all_zero() {
        let stats = length_stats([]);
        assert_eq!(stats.count, 0);
        assert_eq!(stats.mean, 0.0);
        assert!(stats.histogram.is_empty());
    }

    #[test]
    fn identical_lengths_have_zero_spread() {
        let stats = length_stats(["x y", "a b", "c d"]);
        assert_eq!(stats.stddev, 0.0);
        assert_eq!(stats.histogram, BTreeMap::from([(2, 3)]));
    }
}
