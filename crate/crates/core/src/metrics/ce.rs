//! Clinical-finding agreement between generated and reference reports.
//!
//! Each report carries a four-way label per finding. Scoring first
//! collapses the labels to mentioned-vs-not: positive and uncertain count
//! as mentioned, negative and no-mention as not. Precision/recall/F1 then
//! run over (report, finding) cells, pooled (micro) or per finding
//! (macro).

use crate::vocab::FindingVocabulary;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::MetricsError;

/// Four-way finding label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingClass {
    Positive,
    Negative,
    Uncertain,
    NoMention,
}

impl FindingClass {
    pub const ALL: [FindingClass; 4] = [
        FindingClass::Positive,
        FindingClass::Negative,
        FindingClass::Uncertain,
        FindingClass::NoMention,
    ];
}

/// Binary collapse used for scoring: does the report assert the finding?
pub fn collapse_to_binary(class: FindingClass) -> bool {
    matches!(class, FindingClass::Positive | FindingClass::Uncertain)
}

/// Labels for one report. Findings absent from the map read as no-mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingLabelSet {
    pub report_id: String,
    pub labels: BTreeMap<String, FindingClass>,
}

impl FindingLabelSet {
    pub fn class_for(&self, finding: &str) -> FindingClass {
        self.labels
            .get(finding)
            .copied()
            .unwrap_or(FindingClass::NoMention)
    }
}

/// How per-finding cells are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Average {
    /// Pool true/false positive/negative counts over all findings, then
    /// score once.
    Micro,
    /// Score each finding separately and average the scores.
    Macro,
}

/// Agreement scores plus the pooled confusion counts behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeMetrics {
    pub average: Average,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Set when any denominator was zero and the affected score was
    /// defined down to 0.
    pub zero_division: bool,
}

struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn prf(counts: &Counts, zero_division: &mut bool) -> (f64, f64, f64) {
    let mut ratio = |num: usize, den: usize| -> f64 {
        if den == 0 {
            *zero_division = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let p = ratio(counts.tp, counts.tp + counts.fp);
    let r = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = if p + r == 0.0 {
        *zero_division = true;
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f1)
}

/// Scores generated labels against reference labels.
///
/// Sets are paired by report id and must cover the same reports. Every
/// finding in `findings` contributes one cell per report.
pub fn ce_metrics(
    generated: &[FindingLabelSet],
    reference: &[FindingLabelSet],
    findings: &FindingVocabulary,
    average: Average,
) -> Result<CeMetrics, MetricsError> {
    if generated.len() != reference.len() {
        return Err(MetricsError::LengthMismatch {
            generated: generated.len(),
            references: reference.len(),
        });
    }
    let by_id: BTreeMap<&str, &FindingLabelSet> =
        reference.iter().map(|l| (l.report_id.as_str(), l)).collect();

    let mut per_finding: BTreeMap<&str, Counts> = findings
        .iter()
        .map(|f| (f, Counts { tp: 0, fp: 0, fn_: 0 }))
        .collect();
    for gen in generated {
        let reference = by_id
            .get(gen.report_id.as_str())
            .ok_or_else(|| MetricsError::UnpairedReport {
                report_id: gen.report_id.clone(),
            })?;
        for (finding, counts) in per_finding.iter_mut() {
            let g = collapse_to_binary(gen.class_for(finding));
            let r = collapse_to_binary(reference.class_for(finding));
            match (g, r) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    let totals = per_finding.values().fold(
        Counts { tp: 0, fp: 0, fn_: 0 },
        |acc, c| Counts {
            tp: acc.tp + c.tp,
            fp: acc.fp + c.fp,
            fn_: acc.fn_ + c.fn_,
        },
    );

    let mut zero_division = false;
    let (precision, recall, f1) = match average {
        Average::Micro => prf(&totals, &mut zero_division),
        Average::Macro => {
            let mut sums = (0.0, 0.0, 0.0);
            for counts in per_finding.values() {
                let (p, r, f) = prf(counts, &mut zero_division);
                sums.0 += p;
                sums.1 += r;
                sums.2 += f;
            }
            let n = per_finding.len().max(1) as f64;
            (sums.0 / n, sums.1 / n, sums.2 / n)
        }
    };

    Ok(CeMetrics {
        average,
        precision,
        recall,
        f1,
        true_positives: totals.tp,
        false_positives: totals.fp,
        false_negatives: totals.fn_,
        zero_division,
    })
}
