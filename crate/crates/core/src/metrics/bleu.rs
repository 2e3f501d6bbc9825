//! Clipped n-gram precision score with brevity penalty.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Highest n-gram order tracked.
pub const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus accumulator: pools clipped match counts, candidate n-gram totals,
/// and lengths across pairs, then scores the pooled counts. This is not the
/// mean of per-sentence scores.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusBleu {
    matched: [usize; MAX_ORDER],
    total: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

impl CorpusBleu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, hypothesis: &[String], reference: &[String]) {
        self.hyp_len += hypothesis.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            if hypothesis.len() < n {
                continue;
            }
            let reference_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(hypothesis, n) {
                let clip = reference_counts.get(gram).copied().unwrap_or(0);
                self.matched[n - 1] += count.min(clip);
            }
            self.total[n - 1] += hypothesis.len() - n + 1;
        }
    }

    /// Clipped precision for one order; 0 when no candidate n-grams exist.
    pub fn precision(&self, n: usize) -> f64 {
        assert!((1..=MAX_ORDER).contains(&n), "order {n} out of range");
        if self.total[n - 1] == 0 {
            return 0.0;
        }
        self.matched[n - 1] as f64 / self.total[n - 1] as f64
    }

    /// exp(1 - r/c) when the candidate side is shorter than the reference
    /// side, 1 otherwise; 0 for an empty candidate side.
    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Score using orders 1..=max_n: geometric mean of the precisions times
    /// the brevity penalty. Any zero precision zeroes the score (no
    /// smoothing).
    pub fn score(&self, max_n: usize) -> f64 {
        assert!((1..=MAX_ORDER).contains(&max_n), "order {max_n} out of range");
        let mut log_sum = 0.0;
        for n in 1..=max_n {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        self.brevity_penalty() * (log_sum / max_n as f64).exp()
    }
}

/// One-pair convenience wrapper around [`CorpusBleu`].
pub fn sentence_bleu(hypothesis: &[String], reference: &[String], max_n: usize) -> f64 {
    let mut corpus = CorpusBleu::new();
    corpus.add(hypothesis, reference);
    corpus.score(max_n)
}
