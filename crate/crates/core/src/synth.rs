//! Synthetic corpus generation.
//!
//! Builds a self-consistent desk-scale dataset: raw report texts with
//! variably-cased section headers, per-sentence anatomy annotations, scan
//! metadata with timestamps and views, and per-scan token files. Reports
//! are assembled from a fixed bank of sentence groups whose region sets are
//! pairwise disjoint and internally connected, so the number of groups
//! picked for a report is, by construction, its number of valid
//! sentence-anatomy subsets. That construction knowledge is written to a
//! sidecar file for tests to check the real algorithms against.

use crate::corpus::{
    build_annotated_report, AnnotatedReport, AnnotationRecord, SectionConfig,
};
use crate::io::{
    write_json, write_jsonl, write_metadata_csv, IoError, TokenFileRecord,
};
use crate::longitudinal::{ScanRecord, View};
use crate::seed::{derive_seed, rng_from_seed};
use crate::vocab::RegionVocabulary;
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("internal generation failure for `{report_id}`: {message}")]
    Generate { report_id: String, message: String },
}

/// Knobs for the generator. All rates are probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub patients: usize,
    pub min_studies: usize,
    pub max_studies: usize,
    /// Sentence groups drawn per report; also the report's subset count.
    pub min_groups: usize,
    pub max_groups: usize,
    pub token_dim: usize,
    /// Chance that a region's token is present on a scan.
    pub token_present_rate: f64,
    /// Chance that a study carries no frontal scan at all.
    pub lateral_only_rate: f64,
    /// Chance of appending one unlocalized sentence to a report.
    pub unlocalized_rate: f64,
    /// Chance of a second scan in a study.
    pub extra_scan_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            patients: 50,
            min_studies: 1,
            max_studies: 4,
            min_groups: 2,
            max_groups: 5,
            token_dim: 16,
            token_present_rate: 0.85,
            lateral_only_rate: 0.1,
            unlocalized_rate: 0.3,
            extra_scan_rate: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::InvalidSpec(m));
        if self.patients == 0 {
            return err("patients must be at least 1".into());
        }
        if self.min_studies == 0 || self.min_studies > self.max_studies {
            return err(format!(
                "study range {}..={} is invalid",
                self.min_studies, self.max_studies
            ));
        }
        if self.min_groups == 0 || self.min_groups > self.max_groups {
            return err(format!(
                "group range {}..={} is invalid",
                self.min_groups, self.max_groups
            ));
        }
        if self.max_groups > TEMPLATE_BANK.len() {
            return err(format!(
                "max_groups {} exceeds the template bank size {}",
                self.max_groups,
                TEMPLATE_BANK.len()
            ));
        }
        if self.token_dim == 0 {
            return err("token_dim must be at least 1".into());
        }
        for (name, rate) in [
            ("token_present_rate", self.token_present_rate),
            ("lateral_only_rate", self.lateral_only_rate),
            ("unlocalized_rate", self.unlocalized_rate),
            ("extra_scan_rate", self.extra_scan_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return err(format!("{name} {rate} is outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One bank entry: a named, internally connected sentence group.
pub(crate) struct BankGroup {
    pub name: &'static str,
    /// Which sentence/region mapping shape the group exercises.
    pub mapping: &'static str,
    pub sentences: &'static [(&'static str, &'static [&'static str])],
}

/// The sentence bank. Region sets are pairwise disjoint across groups and
/// each group is connected through shared regions, so any selection of
/// groups partitions into exactly one subset per group.
pub(crate) const TEMPLATE_BANK: [BankGroup; 16] = [
    BankGroup {
        name: "mediastinum",
        mapping: "one_to_one",
        sentences: &[("The mediastinum is mildly enlarged.", &["mediastinum"])],
    },
    BankGroup {
        name: "trachea",
        mapping: "one_to_one",
        sentences: &[("The trachea is midline.", &["trachea"])],
    },
    BankGroup {
        name: "carina",
        mapping: "one_to_one",
        sentences: &[("The carina is sharp and well defined.", &["carina"])],
    },
    BankGroup {
        name: "spine",
        mapping: "one_to_one",
        sentences: &[("Mild degenerative changes of the spine.", &["spine"])],
    },
    BankGroup {
        name: "aortic-arch",
        mapping: "one_to_one",
        sentences: &[("The aortic arch is calcified.", &["aortic arch"])],
    },
    BankGroup {
        name: "svc-line",
        mapping: "one_to_one",
        sentences: &[("Central venous catheter tip in the svc.", &["svc"])],
    },
    BankGroup {
        name: "abdomen",
        mapping: "many_to_one",
        sentences: &[
            ("NG tube tip positioned correctly in stomach.", &["abdomen"]),
            ("No free air under diaphragm.", &["abdomen"]),
        ],
    },
    BankGroup {
        name: "right-costophrenic",
        mapping: "many_to_one",
        sentences: &[
            ("Blunting of right costophrenic angle noted.", &["right costophrenic angle"]),
            ("Small right effusion is suspected.", &["right costophrenic angle"]),
        ],
    },
    BankGroup {
        name: "left-costophrenic",
        mapping: "many_to_one",
        sentences: &[
            ("The left costophrenic angle appears sharp.", &["left costophrenic angle"]),
            ("No left effusion is identified.", &["left costophrenic angle"]),
        ],
    },
    BankGroup {
        name: "clavicles",
        mapping: "one_to_many",
        sentences: &[(
            "Degenerative changes seen in both shoulders.",
            &["left clavicle", "right clavicle"],
        )],
    },
    BankGroup {
        name: "hila",
        mapping: "one_to_many",
        sentences: &[(
            "The hilar structures are unremarkable bilaterally.",
            &["left hilar structures", "right hilar structures"],
        )],
    },
    BankGroup {
        name: "hemidiaphragms",
        mapping: "one_to_many",
        sentences: &[(
            "The hemidiaphragms are sharply defined.",
            &["left hemidiaphragm", "right hemidiaphragm"],
        )],
    },
    BankGroup {
        name: "lower-zones",
        mapping: "one_to_many",
        sentences: &[(
            "Patchy consolidation in both lower zones.",
            &["left lower lung zone", "right lower lung zone"],
        )],
    },
    BankGroup {
        name: "lungs",
        mapping: "many_to_many",
        sentences: &[
            ("No suspicious nodules seen.", &["right lung", "left lung"]),
            ("No pneumothorax or infective consolidation.", &["right lung", "left lung"]),
            ("Bilateral atelectasis, likely post-operative.", &["right lung", "left lung"]),
            ("Subtle airspace opacity at the right base.", &["right lung"]),
        ],
    },
    BankGroup {
        name: "cardiac",
        mapping: "many_to_many",
        sentences: &[
            ("The heart is enlarged.", &["cardiac silhouette", "left cardiac silhouette"]),
            ("Left heart border is obscured.", &["left cardiac silhouette"]),
        ],
    },
    BankGroup {
        name: "upper-zones",
        mapping: "many_to_many",
        sentences: &[
            ("The upper zones are clear.", &["left upper lung zone", "right upper lung zone"]),
            ("No apical pneumothorax.", &["right upper lung zone", "right apical zone"]),
        ],
    },
];

const UNLOCALIZED_SENTENCES: [&str; 3] = [
    "No change is seen.",
    "Overall stable appearance.",
    "Comparison is made to the prior exam.",
];

const INDICATIONS: [&str; 5] = [
    "Evaluate for pneumonia.",
    "Shortness of breath.",
    "Chest pain for two days.",
    "Follow-up of pleural effusion.",
    "Fever and cough.",
];

const IMPRESSIONS: [&str; 3] = [
    "No acute cardiopulmonary process.",
    "Stable examination.",
    "Findings discussed above.",
];

const EXAM_HEADERS: [&str; 2] = ["EXAMINATION:", "Examination:"];
const INDICATION_HEADERS: [&str; 4] = ["INDICATION:", "Indication:", "HISTORY:", "History:"];
const FINDINGS_HEADERS: [&str; 3] = ["FINDINGS:", "Findings:", "findings:"];
const IMPRESSION_HEADERS: [&str; 2] = ["IMPRESSION:", "Impression:"];

/// Raw report text as it would arrive from an archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReportRecord {
    pub report_id: String,
    pub text: String,
}

/// Ground truth written next to the generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSidecar {
    pub seed: u64,
    pub spec: SyntheticSpec,
    pub counts: SidecarCounts,
    pub reports: Vec<SidecarReport>,
    pub studies: Vec<SidecarStudy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarCounts {
    pub patients: usize,
    pub studies: usize,
    pub scans: usize,
    pub reports: usize,
    pub lateral_only_studies: usize,
    /// Sum of per-report subset counts over the whole corpus.
    pub sum_subsets: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarReport {
    pub report_id: String,
    pub sentence_count: usize,
    pub unlocalized_count: usize,
    /// Number of groups drawn, i.e. the expected valid subset count.
    pub subset_count: usize,
    pub groups: Vec<SidecarGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarGroup {
    pub name: String,
    pub mapping: String,
    pub regions: BTreeSet<String>,
    pub sentence_indices: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarStudy {
    pub patient_id: String,
    pub study_id: String,
    pub report_id: String,
    pub timestamp: DateTime<Utc>,
    pub has_frontal: bool,
    /// Most recent earlier study of the patient with a frontal scan,
    /// tracked during generation.
    pub expected_prior_study_id: Option<String>,
}

/// Everything the generator produces, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub raw_reports: Vec<RawReportRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub reports: Vec<AnnotatedReport>,
    pub scans: Vec<ScanRecord>,
    pub tokens: Vec<TokenFileRecord>,
    pub sidecar: SyntheticSidecar,
}

fn pick<'a, T, R: Rng>(rng: &mut R, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// Generates a corpus. Identical (spec, seed) inputs produce identical
/// output, file for file.
pub fn generate_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let vocab = RegionVocabulary::default_regions();
    let section_config = SectionConfig::default();
    let base_time = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();

    let mut out = SyntheticCorpus {
        raw_reports: Vec::new(),
        annotations: Vec::new(),
        reports: Vec::new(),
        scans: Vec::new(),
        tokens: Vec::new(),
        sidecar: SyntheticSidecar {
            seed,
            spec: spec.clone(),
            counts: SidecarCounts {
                patients: spec.patients,
                studies: 0,
                scans: 0,
                reports: 0,
                lateral_only_studies: 0,
                sum_subsets: 0,
            },
            reports: Vec::new(),
            studies: Vec::new(),
        },
    };

    for p in 0..spec.patients {
        let patient_id = format!("p{p:04}");
        let mut rng = rng_from_seed(derive_seed(seed, &["patient", &p.to_string()]));
        let n_studies = rng.random_range(spec.min_studies..=spec.max_studies);
        let mut day: i64 = rng.random_range(0..365);
        let mut last_frontal_study: Option<String> = None;

        for s in 0..n_studies {
            day += rng.random_range(1..=30);
            let hour = rng.random_range(6..18);
            let timestamp = base_time + Duration::days(day) + Duration::hours(hour);
            let study_id = format!("s{p:04}-{s}");
            let report_id = format!("rep-{study_id}");

            let lateral_only = rng.random::<f64>() < spec.lateral_only_rate;
            let mut views = Vec::new();
            if lateral_only {
                views.push(View::Lateral);
            } else {
                views.push(*pick(&mut rng, &[View::Ap, View::Pa]));
            }
            if rng.random::<f64>() < spec.extra_scan_rate {
                views.push(if lateral_only {
                    View::Lateral
                } else {
                    *pick(&mut rng, &[View::Ap, View::Pa, View::Lateral])
                });
            }

            for (i, &view) in views.iter().enumerate() {
                let scan_id = format!("sc-{study_id}-{i}");
                out.scans.push(ScanRecord {
                    patient_id: patient_id.clone(),
                    study_id: study_id.clone(),
                    scan_id: scan_id.clone(),
                    view,
                    timestamp,
                    report_id: report_id.clone(),
                });
                out.tokens.push(generate_tokens(
                    seed, &study_id, &scan_id, &vocab, spec,
                ));
            }
            out.sidecar.counts.scans += views.len();

            let report_parts = generate_report(&mut rng, spec, &report_id);
            out.annotations.extend(report_parts.annotations.clone());
            let report = build_annotated_report(
                &report_id,
                &report_parts.raw_text,
                &report_parts.annotations,
                &section_config,
                &vocab,
            )
            .map_err(|e| SynthError::Generate {
                report_id: report_id.clone(),
                message: e.to_string(),
            })?;
            out.reports.push(report);
            out.raw_reports.push(RawReportRecord {
                report_id: report_id.clone(),
                text: report_parts.raw_text,
            });

            out.sidecar.counts.sum_subsets += report_parts.sidecar.subset_count;
            out.sidecar.reports.push(report_parts.sidecar);
            out.sidecar.studies.push(SidecarStudy {
                patient_id: patient_id.clone(),
                study_id: study_id.clone(),
                report_id,
                timestamp,
                has_frontal: !lateral_only,
                expected_prior_study_id: if lateral_only {
                    None
                } else {
                    last_frontal_study.clone()
                },
            });
            if !lateral_only {
                last_frontal_study = Some(study_id);
            } else {
                out.sidecar.counts.lateral_only_studies += 1;
            }
            out.sidecar.counts.studies += 1;
            out.sidecar.counts.reports += 1;
        }
    }

    Ok(out)
}

struct ReportParts {
    raw_text: String,
    annotations: Vec<AnnotationRecord>,
    sidecar: SidecarReport,
}

fn generate_report<R: Rng>(rng: &mut R, spec: &SyntheticSpec, report_id: &str) -> ReportParts {
    let k = rng.random_range(spec.min_groups..=spec.max_groups);
    let mut bank_indices: Vec<usize> = (0..TEMPLATE_BANK.len()).collect();
    bank_indices.shuffle(rng);
    bank_indices.truncate(k);

    // Flatten the chosen groups, shuffle sentence order, then index.
    let mut sentences: Vec<(usize, &str, &[&str])> = Vec::new();
    for &b in &bank_indices {
        for &(text, regions) in TEMPLATE_BANK[b].sentences {
            sentences.push((b, text, regions));
        }
    }
    sentences.shuffle(rng);
    let unlocalized = rng.random::<f64>() < spec.unlocalized_rate;
    let unlocalized_text = if unlocalized {
        Some(*pick(rng, &UNLOCALIZED_SENTENCES))
    } else {
        None
    };

    let mut annotations = Vec::new();
    let mut group_indices: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (index, &(bank, text, regions)) in sentences.iter().enumerate() {
        annotations.push(AnnotationRecord {
            report_id: report_id.to_string(),
            sentence_index: index,
            text: text.to_string(),
            regions: regions.iter().map(|r| r.to_string()).collect(),
        });
        group_indices.entry(bank).or_default().insert(index);
    }
    if let Some(text) = unlocalized_text {
        annotations.push(AnnotationRecord {
            report_id: report_id.to_string(),
            sentence_index: sentences.len(),
            text: text.to_string(),
            regions: BTreeSet::new(),
        });
    }

    let findings_sep = if rng.random::<f64>() < 0.3 { "\n" } else { " " };
    let findings_body = annotations
        .iter()
        .map(|a| a.text.as_str())
        .collect::<Vec<_>>()
        .join(findings_sep);
    let raw_text = format!(
        "{exam} Chest radiograph.\n\n{ind} {indication}\n\n{find} {body}\n\n{imp} {impression}\n",
        exam = pick(rng, &EXAM_HEADERS),
        ind = pick(rng, &INDICATION_HEADERS),
        indication = pick(rng, &INDICATIONS),
        find = pick(rng, &FINDINGS_HEADERS),
        body = findings_body,
        imp = pick(rng, &IMPRESSION_HEADERS),
        impression = pick(rng, &IMPRESSIONS),
    );

    let groups = bank_indices
        .iter()
        .map(|&b| SidecarGroup {
            name: TEMPLATE_BANK[b].name.to_string(),
            mapping: TEMPLATE_BANK[b].mapping.to_string(),
            regions: TEMPLATE_BANK[b]
                .sentences
                .iter()
                .flat_map(|(_, regions)| regions.iter().map(|r| r.to_string()))
                .collect(),
            sentence_indices: group_indices.remove(&b).unwrap_or_default(),
        })
        .collect();

    ReportParts {
        raw_text,
        sidecar: SidecarReport {
            report_id: report_id.to_string(),
            sentence_count: annotations.len(),
            unlocalized_count: usize::from(unlocalized),
            subset_count: k,
            groups,
        },
        annotations,
    }
}

fn generate_tokens(
    seed: u64,
    study_id: &str,
    scan_id: &str,
    vocab: &RegionVocabulary,
    spec: &SyntheticSpec,
) -> TokenFileRecord {
    let mut rng = rng_from_seed(derive_seed(seed, &["tokens", study_id, scan_id]));
    let mut regions = BTreeMap::new();
    for name in vocab.iter() {
        if rng.random::<f64>() < spec.token_present_rate {
            let vector: Vec<f64> = (0..spec.token_dim)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            regions.insert(name.to_string(), vector);
        }
    }
    TokenFileRecord {
        study_id: study_id.to_string(),
        scan_id: scan_id.to_string(),
        d: spec.token_dim,
        regions,
    }
}

/// Standard file names inside a dataset directory.
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const RAW_REPORTS_FILE: &str = "raw_reports.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const METADATA_FILE: &str = "metadata.csv";
pub const TOKENS_FILE: &str = "tokens.jsonl";
pub const SIDECAR_FILE: &str = "sidecar.json";

/// Paths written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub corpus: PathBuf,
    pub raw_reports: PathBuf,
    pub annotations: PathBuf,
    pub metadata: PathBuf,
    pub tokens: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes all corpus files into `dir`, creating it if needed.
pub fn write_corpus(dir: &Path, corpus: &SyntheticCorpus) -> Result<SynthFiles, IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = SynthFiles {
        corpus: dir.join(CORPUS_FILE),
        raw_reports: dir.join(RAW_REPORTS_FILE),
        annotations: dir.join(ANNOTATIONS_FILE),
        metadata: dir.join(METADATA_FILE),
        tokens: dir.join(TOKENS_FILE),
        sidecar: dir.join(SIDECAR_FILE),
    };
    write_jsonl(&files.corpus, &corpus.reports)?;
    write_jsonl(&files.raw_reports, &corpus.raw_reports)?;
    write_jsonl(&files.annotations, &corpus.annotations)?;
    write_metadata_csv(&files.metadata, &corpus.scans)?;
    write_jsonl(&files.tokens, &corpus.tokens)?;
    write_json(&files.sidecar, &corpus.sidecar)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::find_valid_subsets;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            patients: 8,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn bank_groups_are_pairwise_region_disjoint() {
        for (i, a) in TEMPLATE_BANK.iter().enumerate() {
            let a_regions: BTreeSet<&str> = a
                .sentences
                .iter()
                .flat_map(|(_, rs)| rs.iter().copied())
                .collect();
            for b in &TEMPLATE_BANK[i + 1..] {
                for (_, rs) in b.sentences {
                    for r in *rs {
                        assert!(
                            !a_regions.contains(r),
                            "region `{r}` shared by groups `{}` and `{}`",
                            a.name,
                            b.name
                        );
                    }
                }
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn bank_groups_are_internally_connected() {
        // Breadth-first reachability over shared regions within each group.
        for group in &TEMPLATE_BANK {
            let n = group.sentences.len();
            let mut reached = vec![false; n];
            let mut queue = vec![0usize];
            reached[0] = true;
            while let Some(i) = queue.pop() {
                for j in 0..n {
                    if reached[j] {
                        continue;
                    }
                    let overlap = group.sentences[i]
                        .1
                        .iter()
                        .any(|r| group.sentences[j].1.contains(r));
                    if overlap {
                        reached[j] = true;
                        queue.push(j);
                    }
                }
            }
            assert!(
                reached.iter().all(|&r| r),
                "group `{}` is not connected",
                group.name
            );
        }
    }

    #[test]
    fn bank_regions_exist_and_mappings_covered() {
        let vocab = RegionVocabulary::default_regions();
        let mut mappings = BTreeSet::new();
        for group in &TEMPLATE_BANK {
            mappings.insert(group.mapping);
            for (_, rs) in group.sentences {
                for r in *rs {
                    assert!(vocab.contains(r), "unknown region `{r}` in bank");
                }
            }
        }
        assert_eq!(
            mappings,
            BTreeSet::from(["one_to_one", "many_to_one", "one_to_many", "many_to_many"])
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_corpus(&spec, 42).unwrap();
        let b = generate_corpus(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&spec, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn counts_are_consistent() {
        let corpus = generate_corpus(&small_spec(), 7).unwrap();
        let counts = &corpus.sidecar.counts;
        assert_eq!(counts.reports, corpus.reports.len());
        assert_eq!(counts.studies, corpus.sidecar.studies.len());
        assert_eq!(counts.scans, corpus.scans.len());
        assert_eq!(counts.scans, corpus.tokens.len());
        assert_eq!(corpus.raw_reports.len(), corpus.reports.len());
        let sum: usize = corpus
            .sidecar
            .reports
            .iter()
            .map(|r| r.subset_count)
            .sum();
        assert_eq!(counts.sum_subsets, sum);
        let lateral_only = corpus
            .sidecar
            .studies
            .iter()
            .filter(|s| !s.has_frontal)
            .count();
        assert_eq!(counts.lateral_only_studies, lateral_only);
    }

    #[test]
    fn partition_algorithm_matches_construction() {
        let corpus = generate_corpus(&small_spec(), 11).unwrap();
        for (report, truth) in corpus.reports.iter().zip(&corpus.sidecar.reports) {
            assert_eq!(report.report_id, truth.report_id);
            let partition = find_valid_subsets(report);
            assert_eq!(
                partition.subset_count(),
                truth.subset_count,
                "report {}",
                report.report_id
            );
            assert_eq!(partition.unlocalized.len(), truth.unlocalized_count);
            // Each expected group appears as exactly one subset.
            for group in &truth.groups {
                let found = partition
                    .subsets
                    .iter()
                    .any(|s| s.regions == group.regions
                        && s.pair_indices == group.sentence_indices);
                assert!(found, "group `{}` missing in {}", group.name, report.report_id);
            }
        }
    }

    #[test]
    fn reports_roundtrip_through_ingest() {
        let corpus = generate_corpus(&small_spec(), 23).unwrap();
        let vocab = RegionVocabulary::default_regions();
        let config = SectionConfig::default();
        for (raw, report) in corpus.raw_reports.iter().zip(&corpus.reports) {
            let records: Vec<AnnotationRecord> = corpus
                .annotations
                .iter()
                .filter(|a| a.report_id == raw.report_id)
                .cloned()
                .collect();
            let rebuilt =
                build_annotated_report(&raw.report_id, &raw.text, &records, &config, &vocab)
                    .unwrap();
            assert_eq!(&rebuilt, report);
        }
    }

    #[test]
    fn rate_extremes_are_respected() {
        let spec = SyntheticSpec {
            patients: 6,
            unlocalized_rate: 1.0,
            lateral_only_rate: 0.0,
            ..SyntheticSpec::default()
        };
        let corpus = generate_corpus(&spec, 3).unwrap();
        assert!(corpus
            .sidecar
            .reports
            .iter()
            .all(|r| r.unlocalized_count == 1));
        assert!(corpus.sidecar.studies.iter().all(|s| s.has_frontal));
        assert_eq!(corpus.sidecar.counts.lateral_only_studies, 0);

        let spec = SyntheticSpec {
            patients: 6,
            unlocalized_rate: 0.0,
            ..SyntheticSpec::default()
        };
        let corpus = generate_corpus(&spec, 3).unwrap();
        assert!(corpus
            .sidecar
            .reports
            .iter()
            .all(|r| r.unlocalized_count == 0));
    }

    #[test]
    fn expected_priors_follow_frontal_chain() {
        let spec = SyntheticSpec {
            patients: 20,
            min_studies: 3,
            max_studies: 4,
            lateral_only_rate: 0.4,
            ..SyntheticSpec::default()
        };
        let corpus = generate_corpus(&spec, 9).unwrap();
        let mut by_patient: BTreeMap<&str, Vec<&SidecarStudy>> = BTreeMap::new();
        for study in &corpus.sidecar.studies {
            by_patient.entry(&study.patient_id).or_default().push(study);
        }
        for studies in by_patient.values() {
            let mut last_frontal: Option<&str> = None;
            for study in studies {
                if study.has_frontal {
                    assert_eq!(study.expected_prior_study_id.as_deref(), last_frontal);
                    last_frontal = Some(&study.study_id);
                } else {
                    assert!(study.expected_prior_study_id.is_none());
                }
            }
        }
    }

    #[test]
    fn written_files_are_byte_identical_across_runs() {
        let spec = small_spec();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let corpus_a = generate_corpus(&spec, 17).unwrap();
        let corpus_b = generate_corpus(&spec, 17).unwrap();
        let files_a = write_corpus(dir_a.path(), &corpus_a).unwrap();
        let files_b = write_corpus(dir_b.path(), &corpus_b).unwrap();
        for (a, b) in [
            (&files_a.corpus, &files_b.corpus),
            (&files_a.raw_reports, &files_b.raw_reports),
            (&files_a.annotations, &files_b.annotations),
            (&files_a.metadata, &files_b.metadata),
            (&files_a.tokens, &files_b.tokens),
            (&files_a.sidecar, &files_b.sidecar),
        ] {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn spec_validation_rejects_nonsense() {
        let spec = SyntheticSpec {
            patients: 0,
            ..SyntheticSpec::default()
        };
        assert!(matches!(
            generate_corpus(&spec, 0),
            Err(SynthError::InvalidSpec(_))
        ));

        let spec = SyntheticSpec {
            max_groups: TEMPLATE_BANK.len() + 1,
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());

        let spec = SyntheticSpec {
            token_present_rate: 1.5,
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());

        let spec = SyntheticSpec {
            min_studies: 3,
            max_studies: 2,
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn timestamps_strictly_increase_per_patient() {
        let corpus = generate_corpus(&small_spec(), 5).unwrap();
        let mut by_patient: BTreeMap<&str, Vec<DateTime<Utc>>> = BTreeMap::new();
        for study in &corpus.sidecar.studies {
            by_patient
                .entry(&study.patient_id)
                .or_default()
                .push(study.timestamp);
        }
        for times in by_patient.values() {
            for pair in times.windows(2) {
                assert!(pair[0] < pair[1]);
            }
        }
    }
}
