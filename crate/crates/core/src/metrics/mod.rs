//! Report evaluation: text-overlap scores, clinical-finding agreement, and
//! length statistics.
//!
//! Overlap metrics work on the shared [`text::tokenize`] tokenization.
//! Corpus aggregation is metric-specific: n-gram match counts are pooled
//! before scoring, while the LCS and alignment scores are averaged per pair.

pub mod bleu;
pub mod ce;
pub mod labeler;
pub mod length;
pub mod meteor;
pub mod rouge;
pub mod text;

pub use bleu::{sentence_bleu, CorpusBleu, MAX_ORDER};
pub use ce::{ce_metrics, collapse_to_binary, Average, CeMetrics, FindingClass, FindingLabelSet};
pub use labeler::label_report;
pub use length::{length_stats, word_count, LengthStats};
pub use meteor::{meteor, MeteorParams};
pub use rouge::{rouge_l, DEFAULT_ROUGE_BETA};
pub use text::{stem, tokenize};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("generated and reference sets differ in size: {generated} vs {references}")]
    LengthMismatch { generated: usize, references: usize },
    #[error("no reference labels for report `{report_id}`")]
    UnpairedReport { report_id: String },
}

/// Scores for one generated/reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair_count: usize,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub generated_length: LengthStats,
    pub reference_length: LengthStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce: Option<CeMetrics>,
}

/// Scores a generated corpus against its references, position by position.
///
/// When label sets are supplied, finding agreement is computed over the
/// standard labeler vocabulary with the requested averaging.
pub fn evaluate(
    generated: &[String],
    references: &[String],
    labels: Option<(&[FindingLabelSet], &[FindingLabelSet])>,
    average: Average,
) -> Result<EvalReport, MetricsError> {
    if generated.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            generated: generated.len(),
            references: references.len(),
        });
    }

    let mut corpus = CorpusBleu::new();
    let mut rouge_sum = 0.0;
    let mut meteor_sum = 0.0;
    let meteor_params = MeteorParams::default();
    for (g, r) in generated.iter().zip(references) {
        let g_tokens = tokenize(g);
        let r_tokens = tokenize(r);
        corpus.add(&g_tokens, &r_tokens);
        rouge_sum += rouge_l(&g_tokens, &r_tokens, DEFAULT_ROUGE_BETA);
        meteor_sum += meteor(&g_tokens, &r_tokens, &meteor_params);
    }
    let n = generated.len();
    let mean = |sum: f64| if n == 0 { 0.0 } else { sum / n as f64 };

    let ce = match labels {
        Some((gen_labels, ref_labels)) => {
            let vocab = crate::vocab::FindingVocabulary::default_labeler();
            Some(ce_metrics(gen_labels, ref_labels, &vocab, average)?)
        }
        None => None,
    };

    Ok(EvalReport {
        pair_count: n,
        bleu_1: corpus.score(1),
        bleu_2: corpus.score(2),
        bleu_3: corpus.score(3),
        bleu_4: corpus.score(4),
        rouge_l: mean(rouge_sum),
        meteor: mean(meteor_sum),
        generated_length: length_stats(generated.iter().map(String::as_str)),
        reference_length: length_stats(references.iter().map(String::as_str)),
        ce,
    })
}
