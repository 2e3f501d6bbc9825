//! Alignment-based score with exact and stemmed matching stages and a
//! fragmentation penalty.

use super::text::stem;
use serde::{Deserialize, Serialize};

/// Score parameters. `alpha` weights recall in the harmonic mean (1.0 would
/// ignore precision entirely); `beta`/`gamma` shape the fragmentation
/// penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

/// Greedy two-stage alignment: exact matches first, then stem matches over
/// the leftovers, each hypothesis token taking the earliest unused
/// reference token.
fn align(hypothesis: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut matched: Vec<Option<usize>> = vec![None; hypothesis.len()];

    for (i, token) in hypothesis.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && reference[j] == *token) {
            ref_used[j] = true;
            matched[i] = Some(j);
        }
    }
    for (i, token) in hypothesis.iter().enumerate() {
        if matched[i].is_some() {
            continue;
        }
        let token_stem = stem(token);
        if let Some(j) =
            (0..reference.len()).find(|&j| !ref_used[j] && stem(&reference[j]) == token_stem)
        {
            ref_used[j] = true;
            matched[i] = Some(j);
        }
    }

    matched
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

/// Chunks are maximal runs of matches contiguous on both sides.
fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in alignment {
        let contiguous = matches!(prev, Some((pi, pj)) if i == pi + 1 && j == pj + 1);
        if !contiguous {
            chunks += 1;
        }
        prev = Some((i, j));
    }
    chunks
}

/// F-mean of alignment precision/recall, discounted by fragmentation:
///
/// F = P R / (alpha P + (1 - alpha) R),
/// penalty = gamma (chunks / matches)^beta, zero when the alignment is a
/// single chunk, score = F (1 - penalty).
///
/// The single-chunk exemption keeps a verbatim match at exactly 1.0.
pub fn meteor(hypothesis: &[String], reference: &[String], params: &MeteorParams) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let alignment = align(hypothesis, reference);
    let m = alignment.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / hypothesis.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);

    let chunks = chunk_count(&alignment);
    let penalty = if chunks <= 1 {
        0.0
    } else {
        params.gamma * (chunks as f64 / m).powf(params.beta)
    };
    f_mean * (1.0 - penalty)
}
