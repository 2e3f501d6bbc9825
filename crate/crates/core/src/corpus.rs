//! Canonical report data model and parsing.
//!
//! Raw reports carry free text with section headers; annotations carry
//! per-sentence anatomical region sets. Parsing turns both into an
//! [`AnnotatedReport`], the unit everything downstream operates on.
//! Annotations are authoritative for sentence boundaries;
//! [`split_sentences`] exists as a fallback when only raw text is available.

use crate::vocab::RegionVocabulary;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("no findings section found in report{}", fmt_id(.report_id))]
    MissingFindings { report_id: Option<String> },
    #[error("unknown region `{name}` in annotations for sentence {sentence_index}")]
    UnknownRegion { name: String, sentence_index: usize },
    #[error("duplicate sentence index {index} in annotation records")]
    DuplicateSentenceIndex { index: usize },
    #[error("annotation records span multiple report ids: `{first}` and `{second}`")]
    MixedReportIds { first: String, second: String },
    #[error(
        "annotations for report `{report_id}` do not reproduce its findings section"
    )]
    AnnotationMismatch { report_id: String },
}

fn fmt_id(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" `{id}`"),
        None => String::new(),
    }
}

/// One report sentence together with the set of anatomical regions it
/// describes. An empty region set marks the sentence as unlocalized
/// (e.g. "No change is seen.").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceAnatomyPair {
    pub sentence_index: usize,
    pub text: String,
    pub regions: BTreeSet<String>,
}

impl SentenceAnatomyPair {
    pub fn is_unlocalized(&self) -> bool {
        self.regions.is_empty()
    }
}

/// A parsed report: findings text, optional indication text, and the ordered
/// list of sentence-anatomy pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedReport {
    pub report_id: String,
    pub findings_text: String,
    #[serde(default)]
    pub indication_text: String,
    pub pairs: Vec<SentenceAnatomyPair>,
}

impl AnnotatedReport {
    pub fn sentence_count(&self) -> usize {
        self.pairs.len()
    }

    /// Indices of sentences with an empty region set.
    pub fn unlocalized_indices(&self) -> Vec<usize> {
        self.pairs
            .iter()
            .filter(|p| p.is_unlocalized())
            .map(|p| p.sentence_index)
            .collect()
    }

    /// Joins sentence texts in report order with single spaces.
    pub fn joined_sentences(&self) -> String {
        let texts: Vec<&str> = self.pairs.iter().map(|p| p.text.as_str()).collect();
        texts.join(" ")
    }
}

/// Per-region anatomical token vectors for one scan, laid out in region
/// vocabulary order. Undetected regions carry `present = false` and the
/// exact all-zeros vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomicalTokenSet {
    /// Vector dimensionality (1024 at full scale; synthetic fixtures use less).
    pub d: usize,
    /// One entry per vocabulary region, at the region's vocabulary index.
    pub entries: Vec<RegionToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionToken {
    pub present: bool,
    pub vector: Vec<f64>,
}

impl AnatomicalTokenSet {
    /// An all-zeros set with `present = false` everywhere.
    pub fn zeros(vocab: &RegionVocabulary, d: usize) -> Self {
        Self {
            d,
            entries: vec![
                RegionToken {
                    present: false,
                    vector: vec![0.0; d],
                };
                vocab.len()
            ],
        }
    }

    /// Builds a set from a map of present regions to vectors; everything else
    /// is zero-filled. Region names must be in the vocabulary and vectors
    /// must have length `d`.
    pub fn from_present(
        vocab: &RegionVocabulary,
        d: usize,
        present: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, String> {
        let mut set = Self::zeros(vocab, d);
        for (name, vector) in present {
            let idx = vocab
                .index_of(name)
                .ok_or_else(|| format!("unknown region `{name}` in token set"))?;
            if vector.len() != d {
                return Err(format!(
                    "vector for region `{name}` has length {}, expected {d}",
                    vector.len()
                ));
            }
            set.entries[idx] = RegionToken {
                present: true,
                vector: vector.clone(),
            };
        }
        Ok(set)
    }

    pub fn present_count(&self) -> usize {
        self.entries.iter().filter(|e| e.present).count()
    }
}

/// Section headers recognised by [`parse_report_sections`]. Matching is
/// case-insensitive; headers are words followed by a colon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionConfig {
    pub findings_headers: Vec<String>,
    pub indication_headers: Vec<String>,
    /// Headers that terminate a section without contributing text.
    pub other_headers: Vec<String>,
}

impl Default for SectionConfig {
    fn default() -> Self {
        Self {
            findings_headers: vec!["FINDINGS".into()],
            indication_headers: vec!["INDICATION".into(), "HISTORY".into()],
            other_headers: vec![
                "IMPRESSION".into(),
                "COMPARISON".into(),
                "TECHNIQUE".into(),
                "EXAMINATION".into(),
            ],
        }
    }
}

/// Findings and indication text extracted from a raw report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportSections {
    pub findings_text: String,
    pub indication_text: String,
}

#[derive(Clone, Copy, PartialEq)]
enum SectionKind {
    Findings,
    Indication,
    Other,
}

/// Extracts the findings and indication sections from raw report text.
///
/// A section runs from its header to the next recognised header or the end
/// of the report. The first occurrence of each section wins; indication
/// headers are tried in config order, so "INDICATION" beats its "HISTORY"
/// alias when both appear. An absent or empty findings section is an error
/// because the report is unusable as a target.
pub fn parse_report_sections(
    raw_report: &str,
    config: &SectionConfig,
) -> Result<ReportSections, CorpusError> {
    let mut markers: Vec<(usize, usize, SectionKind, &str)> = Vec::new();
    for header in &config.findings_headers {
        find_headers(raw_report, header, SectionKind::Findings, &mut markers);
    }
    for header in &config.indication_headers {
        find_headers(raw_report, header, SectionKind::Indication, &mut markers);
    }
    for header in &config.other_headers {
        find_headers(raw_report, header, SectionKind::Other, &mut markers);
    }
    markers.sort_by_key(|&(start, ..)| start);

    let mut findings = None;
    let mut indication: Option<(usize, String)> = None;
    for (i, &(_, body_start, kind, header)) in markers.iter().enumerate() {
        let body_end = markers
            .get(i + 1)
            .map(|&(start, ..)| start)
            .unwrap_or(raw_report.len());
        let body = raw_report[body_start..body_end].trim();
        match kind {
            SectionKind::Findings => {
                if findings.is_none() {
                    findings = Some(body.to_string());
                }
            }
            SectionKind::Indication => {
                // Prefer the earliest header name in config order.
                let priority = config
                    .indication_headers
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(header))
                    .unwrap_or(usize::MAX);
                let better = match &indication {
                    Some((current, _)) => priority < *current,
                    None => true,
                };
                if better {
                    indication = Some((priority, body.to_string()));
                }
            }
            SectionKind::Other => {}
        }
    }

    match findings {
        Some(text) if !text.is_empty() => Ok(ReportSections {
            findings_text: text,
            indication_text: indication.map(|(_, t)| t).unwrap_or_default(),
        }),
        _ => Err(CorpusError::MissingFindings { report_id: None }),
    }
}

/// Records every `HEADER :`-style occurrence of `header` in `text`.
/// The header must sit at a word boundary and be followed by a colon.
fn find_headers<'a>(
    text: &str,
    header: &'a str,
    kind: SectionKind,
    out: &mut Vec<(usize, usize, SectionKind, &'a str)>,
) {
    let lower = text.to_lowercase();
    let needle = header.to_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        from = end;
        let boundary_before = start == 0
            || !text[..start]
                .chars()
                .next_back()
                .is_some_and(char::is_alphanumeric);
        if !boundary_before {
            continue;
        }
        // Allow whitespace between the header word and the colon.
        let rest = &text[end..];
        let after_ws = rest.len() - rest.trim_start().len();
        if rest.trim_start().starts_with(':') {
            let body_start = end + after_ws + 1;
            out.push((start, body_start, kind, header));
        }
    }
}

/// One annotation record: a sentence of a report plus its region set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub report_id: String,
    pub sentence_index: usize,
    pub text: String,
    pub regions: BTreeSet<String>,
}

/// Assembles an [`AnnotatedReport`] from annotation records.
///
/// Records must all reference the same report id; region names must resolve
/// against the vocabulary; sentence indices must be unique. Pairs come out
/// ordered by sentence index and `findings_text` is their joined text
/// (annotations are the authority on sentence boundaries). An empty record
/// list yields a report with zero pairs and an empty id.
pub fn parse_annotations(
    records: &[AnnotationRecord],
    vocab: &RegionVocabulary,
) -> Result<AnnotatedReport, CorpusError> {
    let report_id = records
        .first()
        .map(|r| r.report_id.clone())
        .unwrap_or_default();
    let mut pairs: Vec<SentenceAnatomyPair> = Vec::with_capacity(records.len());
    let mut seen = BTreeSet::new();
    for record in records {
        if record.report_id != report_id {
            return Err(CorpusError::MixedReportIds {
                first: report_id,
                second: record.report_id.clone(),
            });
        }
        if !seen.insert(record.sentence_index) {
            return Err(CorpusError::DuplicateSentenceIndex {
                index: record.sentence_index,
            });
        }
        for region in &record.regions {
            if !vocab.contains(region) {
                return Err(CorpusError::UnknownRegion {
                    name: region.clone(),
                    sentence_index: record.sentence_index,
                });
            }
        }
        pairs.push(SentenceAnatomyPair {
            sentence_index: record.sentence_index,
            text: record.text.clone(),
            regions: record.regions.clone(),
        });
    }
    pairs.sort_by_key(|p| p.sentence_index);
    let findings_text = {
        let texts: Vec<&str> = pairs.iter().map(|p| p.text.as_str()).collect();
        texts.join(" ")
    };
    Ok(AnnotatedReport {
        report_id,
        findings_text,
        indication_text: String::new(),
        pairs,
    })
}

/// Full ingest for one report: sections from the raw text, pairs from the
/// annotation records, cross-checked against each other.
///
/// The joined annotation sentences must reproduce the findings section up
/// to whitespace; anything else means the annotations belong to different
/// text. The resulting report keeps the annotation sentences (authoritative
/// boundaries) as `findings_text` and the parsed indication section.
pub fn build_annotated_report(
    report_id: &str,
    raw_report: &str,
    records: &[AnnotationRecord],
    config: &SectionConfig,
    vocab: &RegionVocabulary,
) -> Result<AnnotatedReport, CorpusError> {
    let sections = parse_report_sections(raw_report, config).map_err(|e| match e {
        CorpusError::MissingFindings { .. } => CorpusError::MissingFindings {
            report_id: Some(report_id.to_string()),
        },
        other => other,
    })?;
    let mut report = parse_annotations(records, vocab)?;
    if !records.is_empty() && report.report_id != report_id {
        return Err(CorpusError::MixedReportIds {
            first: report_id.to_string(),
            second: report.report_id,
        });
    }

    let normalize = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalize(&sections.findings_text) != normalize(&report.findings_text) {
        return Err(CorpusError::AnnotationMismatch {
            report_id: report_id.to_string(),
        });
    }

    report.report_id = report_id.to_string();
    report.indication_text = sections.indication_text;
    Ok(report)
}

/// Abbreviations that suppress a sentence break at a following period.
/// Stored lowercase without the trailing period.
pub const DEFAULT_ABBREVIATIONS: [&str; 10] =
    ["dr", "mr", "mrs", "ms", "vs", "etc", "e.g", "i.e", "a.m", "p.m"];

/// Splits findings text into sentences.
///
/// A sentence ends at a run of `.`, `?` or `!` followed by whitespace or the
/// end of the text, unless the word before the period is on the abbreviation
/// guard list. Joining the result with single spaces reproduces the input up
/// to whitespace.
pub fn split_sentences(findings_text: &str) -> Vec<String> {
    split_sentences_with(findings_text, &DEFAULT_ABBREVIATIONS)
}

pub fn split_sentences_with(findings_text: &str, abbreviations: &[&str]) -> Vec<String> {
    let chars: Vec<char> = findings_text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '?' | '!') {
            let mut end = i;
            while end + 1 < chars.len() && matches!(chars[end + 1], '.' | '?' | '!') {
                end += 1;
            }
            let at_boundary = end + 1 >= chars.len() || chars[end + 1].is_whitespace();
            let guarded = chars[i] == '.'
                && i == end
                && is_guarded_abbreviation(&chars[start..i], abbreviations);
            if at_boundary && !guarded {
                let sentence: String = chars[start..=end].iter().collect();
                let sentence = sentence.trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = end + 1;
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    let tail: String = chars[start.min(chars.len())..].iter().collect();
    let tail = tail.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

fn is_guarded_abbreviation(before: &[char], abbreviations: &[&str]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word.trim_matches(|c: char| !c.is_alphanumeric() && c != '.');
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    abbreviations.iter().any(|a| lower == *a)
}
