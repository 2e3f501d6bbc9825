//! Rule-based finding labeler.
//!
//! A deterministic stand-in for a learned labeler, good enough to close the
//! evaluation loop on synthetic reports: per sentence, phrase lists detect
//! finding mentions and cue words decide their class. Across sentences the
//! strongest class wins (positive > uncertain > negative).

use super::ce::{FindingClass, FindingLabelSet};
use crate::corpus::split_sentences;
use std::collections::BTreeMap;

/// Finding phrase lists, matched as lowercase substrings of a sentence.
const PHRASES: [(&str, &[&str]); 13] = [
    (
        "enlarged_cardiomediastinum",
        &[
            "mediastinum is mildly enlarged",
            "mediastinum is enlarged",
            "widened mediastinum",
            "mediastinal widening",
            "cardiomediastinal silhouette is enlarged",
        ],
    ),
    (
        "cardiomegaly",
        &["heart is enlarged", "cardiomegaly", "enlarged cardiac silhouette", "heart size is enlarged"],
    ),
    ("lung_opacity", &["opacity", "opacities", "airspace disease"]),
    ("lung_lesion", &["nodule", "lung lesion", "pulmonary mass"]),
    ("edema", &["edema", "vascular congestion", "fluid overload"]),
    ("consolidation", &["consolidation"]),
    ("pneumonia", &["pneumonia", "infectious process"]),
    ("atelectasis", &["atelectasis", "atelectatic"]),
    ("pneumothorax", &["pneumothorax", "pneumothoraces"]),
    (
        "pleural_effusion",
        &["pleural effusion", "effusion", "blunting of"],
    ),
    (
        "pleural_other",
        &["pleural thickening", "pleural scarring", "hydropneumothorax"],
    ),
    ("fracture", &["fracture"]),
    (
        "support_devices",
        &[
            "ng tube",
            "endotracheal tube",
            "et tube",
            "picc",
            "central line",
            "pacemaker",
            "chest tube",
            "tracheostomy",
            "catheter",
        ],
    ),
];

const NEGATION_CUES: [&str; 8] = [
    "no ",
    "not ",
    "without",
    "free of",
    "clear of",
    "negative for",
    "resolved",
    "absence of",
];

const UNCERTAINTY_CUES: [&str; 7] = [
    "may ",
    "possible",
    "possibly",
    "suspected",
    "cannot exclude",
    "questionable",
    "likely",
];

fn rank(class: FindingClass) -> u8 {
    match class {
        FindingClass::Positive => 3,
        FindingClass::Uncertain => 2,
        FindingClass::Negative => 1,
        FindingClass::NoMention => 0,
    }
}

fn classify_sentence(sentence: &str) -> FindingClass {
    if UNCERTAINTY_CUES.iter().any(|cue| sentence.contains(cue)) {
        FindingClass::Uncertain
    } else if NEGATION_CUES.iter().any(|cue| sentence.contains(cue)) {
        FindingClass::Negative
    } else {
        FindingClass::Positive
    }
}

/// Labels one report. Findings never mentioned stay no-mention;
/// `no_finding` is positive exactly when nothing else is asserted.
pub fn label_report(report_id: &str, text: &str) -> FindingLabelSet {
    let sentences = split_sentences(text);
    let mut labels: BTreeMap<String, FindingClass> = BTreeMap::new();

    for sentence in &sentences {
        let lowered = sentence.to_lowercase();
        for (finding, phrases) in PHRASES {
            if !phrases.iter().any(|p| lowered.contains(p)) {
                continue;
            }
            let class = classify_sentence(&lowered);
            let current = labels
                .get(finding)
                .copied()
                .unwrap_or(FindingClass::NoMention);
            if rank(class) > rank(current) {
                labels.insert(finding.to_string(), class);
            }
        }
    }

    let asserted = labels
        .values()
        .any(|&c| matches!(c, FindingClass::Positive | FindingClass::Uncertain));
    labels.insert(
        "no_finding".to_string(),
        if asserted {
            FindingClass::Negative
        } else {
            FindingClass::Positive
        },
    );

    FindingLabelSet {
        report_id: report_id.to_string(),
        labels,
    }
}
