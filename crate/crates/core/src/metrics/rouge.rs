//! Longest-common-subsequence F-measure.

/// Weight on recall in the F-measure; 1.0 balances precision and recall.
pub const DEFAULT_ROUGE_BETA: f64 = 1.0;

/// LCS length by dynamic programming over two rolling rows.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for token_a in a {
        for (j, token_b) in b.iter().enumerate() {
            row[j + 1] = if token_a == token_b {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// F-measure over the LCS: P = lcs/|hypothesis|, R = lcs/|reference|,
/// F = (1+beta^2) P R / (R + beta^2 P). Zero when either side is empty or
/// nothing aligns.
pub fn rouge_l(hypothesis: &[String], reference: &[String], beta: f64) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(hypothesis, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hypothesis.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}
