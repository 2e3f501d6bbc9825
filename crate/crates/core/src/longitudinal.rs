//! Longitudinal study pairing: ordering a patient's exam history and
//! attaching to each current study the most recent earlier study that has a
//! usable frontal scan.

use crate::corpus::AnatomicalTokenSet;
use crate::seed::{derive_seed, rng_from_seed};
use crate::vocab::RegionVocabulary;
use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum LongitudinalError {
    #[error("patient `{patient_id}` has two studies at {timestamp}; ordering is ambiguous")]
    DuplicateTimestamp {
        patient_id: String,
        timestamp: DateTime<Utc>,
    },
    #[error("study `{study_id}` mixes report ids `{first}` and `{second}`")]
    ConflictingReportId {
        study_id: String,
        first: String,
        second: String,
    },
    #[error("study `{study_id}` has no frontal (AP/PA) scan")]
    NoFrontalScan { study_id: String },
    #[error("no token set stored for study `{study_id}` scan `{scan_id}`")]
    MissingTokens { study_id: String, scan_id: String },
}

/// Radiographic view position. Only AP and PA scans carry the anatomy the
/// token extractor understands; lateral and unknown views are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum View {
    Ap,
    Pa,
    Lateral,
    Other,
}

impl View {
    pub fn is_frontal(self) -> bool {
        matches!(self, View::Ap | View::Pa)
    }
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AP" => Ok(View::Ap),
            "PA" => Ok(View::Pa),
            "LATERAL" | "LL" | "LAT" => Ok(View::Lateral),
            "" => Err("empty view".into()),
            _ => Ok(View::Other),
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            View::Ap => "AP",
            View::Pa => "PA",
            View::Lateral => "LATERAL",
            View::Other => "OTHER",
        };
        f.write_str(s)
    }
}

/// One image acquisition, as read from the metadata table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub patient_id: String,
    pub study_id: String,
    pub scan_id: String,
    pub view: View,
    pub timestamp: DateTime<Utc>,
    pub report_id: String,
}

/// One exam: all scans sharing a study id, with the study-level fields
/// factored out. Scans keep their metadata order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub patient_id: String,
    pub study_id: String,
    pub timestamp: DateTime<Utc>,
    pub report_id: String,
    pub scans: Vec<ScanRecord>,
}

impl StudyRecord {
    pub fn has_frontal_scan(&self) -> bool {
        self.scans.iter().any(|s| s.view.is_frontal())
    }
}

/// A current study joined with its prior. `prior_study_id`/`prior_scan_id`
/// are `None` for a patient's first usable exam.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongitudinalPair {
    pub patient_id: String,
    pub report_id: String,
    pub current_study_id: String,
    pub current_scan_id: String,
    pub prior_study_id: Option<String>,
    pub prior_scan_id: Option<String>,
}

impl LongitudinalPair {
    pub fn is_initial(&self) -> bool {
        self.prior_study_id.is_none()
    }
}

/// Anatomical token sets keyed by (study id, scan id).
#[derive(Debug, Clone, Default)]
pub struct TokenStore {
    sets: BTreeMap<(String, String), AnatomicalTokenSet>,
}

impl TokenStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, study_id: &str, scan_id: &str, tokens: AnatomicalTokenSet) {
        self.sets
            .insert((study_id.to_string(), scan_id.to_string()), tokens);
    }

    pub fn get(&self, study_id: &str, scan_id: &str) -> Option<&AnatomicalTokenSet> {
        self.sets.get(&(study_id.to_string(), scan_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Groups scan rows into studies, keyed by study id.
///
/// Studies inherit the earliest scan timestamp; mixed report ids within a
/// study are rejected.
pub fn group_studies(scans: &[ScanRecord]) -> Result<Vec<StudyRecord>, LongitudinalError> {
    let mut by_study: BTreeMap<&str, StudyRecord> = BTreeMap::new();
    for scan in scans {
        match by_study.get_mut(scan.study_id.as_str()) {
            Some(study) => {
                if study.report_id != scan.report_id {
                    return Err(LongitudinalError::ConflictingReportId {
                        study_id: scan.study_id.clone(),
                        first: study.report_id.clone(),
                        second: scan.report_id.clone(),
                    });
                }
                study.timestamp = study.timestamp.min(scan.timestamp);
                study.scans.push(scan.clone());
            }
            None => {
                by_study.insert(
                    &scan.study_id,
                    StudyRecord {
                        patient_id: scan.patient_id.clone(),
                        study_id: scan.study_id.clone(),
                        timestamp: scan.timestamp,
                        report_id: scan.report_id.clone(),
                        scans: vec![scan.clone()],
                    },
                );
            }
        }
    }
    Ok(by_study.into_values().collect())
}

/// Picks the representative frontal scan of a study: the AP/PA scan with the
/// most present tokens, ties broken uniformly at random. The tie-break seed
/// depends only on (global seed, patient id, study id), so re-runs agree.
pub fn select_scan_within_study<'a>(
    study: &'a StudyRecord,
    store: &TokenStore,
    global_seed: u64,
) -> Result<&'a ScanRecord, LongitudinalError> {
    let mut best: Vec<&ScanRecord> = Vec::new();
    let mut best_count = 0usize;
    for scan in study.scans.iter().filter(|s| s.view.is_frontal()) {
        let tokens = store.get(&scan.study_id, &scan.scan_id).ok_or_else(|| {
            LongitudinalError::MissingTokens {
                study_id: scan.study_id.clone(),
                scan_id: scan.scan_id.clone(),
            }
        })?;
        let count = tokens.present_count();
        if best.is_empty() || count > best_count {
            best.clear();
            best.push(scan);
            best_count = count;
        } else if count == best_count {
            best.push(scan);
        }
    }
    match best.len() {
        0 => Err(LongitudinalError::NoFrontalScan {
            study_id: study.study_id.clone(),
        }),
        1 => Ok(best[0]),
        n => {
            let seed = derive_seed(
                global_seed,
                &["scan-select", &study.patient_id, &study.study_id],
            );
            let mut rng = rng_from_seed(seed);
            Ok(best[rng.random_range(0..n)])
        }
    }
}

/// Result of pairing: the pairs in (patient id, timestamp) order, plus how
/// many studies were dropped for lacking a frontal scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingOutcome {
    pub pairs: Vec<LongitudinalPair>,
    pub excluded_no_frontal: usize,
}

/// Builds longitudinal pairs from raw scan rows.
///
/// Per patient, studies are ordered by timestamp (equal timestamps are
/// rejected). Each study with a frontal scan becomes a current exam; its
/// prior is the most recent strictly-earlier study of the same patient that
/// also has a frontal scan. Studies without frontal scans are excluded from
/// both roles and counted.
pub fn build_longitudinal_pairs(
    scans: &[ScanRecord],
    store: &TokenStore,
    global_seed: u64,
) -> Result<PairingOutcome, LongitudinalError> {
    let studies = group_studies(scans)?;

    let mut by_patient: BTreeMap<&str, Vec<&StudyRecord>> = BTreeMap::new();
    for study in &studies {
        by_patient.entry(&study.patient_id).or_default().push(study);
    }

    let mut pairs = Vec::new();
    let mut excluded = 0usize;
    for (patient_id, mut history) in by_patient {
        history.sort_by_key(|s| s.timestamp);
        for pair in history.windows(2) {
            if pair[0].timestamp == pair[1].timestamp {
                return Err(LongitudinalError::DuplicateTimestamp {
                    patient_id: patient_id.to_string(),
                    timestamp: pair[0].timestamp,
                });
            }
        }

        for (i, current) in history.iter().enumerate() {
            if !current.has_frontal_scan() {
                excluded += 1;
                continue;
            }
            let current_scan = select_scan_within_study(current, store, global_seed)?;
            let prior = history[..i]
                .iter()
                .rev()
                .find(|s| s.has_frontal_scan());
            let (prior_study_id, prior_scan_id) = match prior {
                Some(study) => {
                    let scan = select_scan_within_study(study, store, global_seed)?;
                    (Some(study.study_id.clone()), Some(scan.scan_id.clone()))
                }
                None => (None, None),
            };
            pairs.push(LongitudinalPair {
                patient_id: patient_id.to_string(),
                report_id: current.report_id.clone(),
                current_study_id: current.study_id.clone(),
                current_scan_id: current_scan.scan_id.clone(),
                prior_study_id,
                prior_scan_id,
            });
        }
    }

    Ok(PairingOutcome {
        pairs,
        excluded_no_frontal: excluded,
    })
}

/// A pair's token sets, ready for fusion. Initial exams get an all-zero,
/// all-absent prior of the same shape as the current set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedTokenPair {
    pub report_id: String,
    pub current: AnatomicalTokenSet,
    pub prior: AnatomicalTokenSet,
}

/// Looks up the token sets behind each pair. The prior of an initial exam is
/// the zero set: absent everywhere, every vector all zeros.
pub fn align_token_sets(
    pairs: &[LongitudinalPair],
    store: &TokenStore,
    vocab: &RegionVocabulary,
    d: usize,
) -> Result<Vec<AlignedTokenPair>, LongitudinalError> {
    let mut aligned = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let current = store
            .get(&pair.current_study_id, &pair.current_scan_id)
            .ok_or_else(|| LongitudinalError::MissingTokens {
                study_id: pair.current_study_id.clone(),
                scan_id: pair.current_scan_id.clone(),
            })?
            .clone();
        let prior = match (&pair.prior_study_id, &pair.prior_scan_id) {
            (Some(study_id), Some(scan_id)) => store
                .get(study_id, scan_id)
                .ok_or_else(|| LongitudinalError::MissingTokens {
                    study_id: study_id.clone(),
                    scan_id: scan_id.clone(),
                })?
                .clone(),
            _ => AnatomicalTokenSet::zeros(vocab, d),
        };
        aligned.push(AlignedTokenPair {
            report_id: pair.report_id.clone(),
            current,
            prior,
        });
    }
    Ok(aligned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(day: u32, hour: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, day, hour, 0, 0).unwrap()
    }

    fn scan(
        patient: &str,
        study: &str,
        scan_id: &str,
        view: View,
        timestamp: DateTime<Utc>,
    ) -> ScanRecord {
        ScanRecord {
            patient_id: patient.to_string(),
            study_id: study.to_string(),
            scan_id: scan_id.to_string(),
            view,
            timestamp,
            report_id: format!("rep-{study}"),
        }
    }

    fn small_vocab() -> RegionVocabulary {
        RegionVocabulary::new(["left lung", "right lung"]).unwrap()
    }

    fn tokens_with_presence(vocab: &RegionVocabulary, present: usize) -> AnatomicalTokenSet {
        let mut tokens = AnatomicalTokenSet::zeros(vocab, 2);
        for entry in tokens.entries.iter_mut().take(present) {
            entry.present = true;
            entry.vector = vec![1.0, 2.0];
        }
        tokens
    }

    fn store_for(scans: &[ScanRecord], vocab: &RegionVocabulary) -> TokenStore {
        let mut store = TokenStore::new();
        for s in scans {
            store.insert(&s.study_id, &s.scan_id, tokens_with_presence(vocab, 1));
        }
        store
    }

    #[test]
    fn view_parsing_and_frontal_check() {
        assert_eq!("ap".parse::<View>().unwrap(), View::Ap);
        assert_eq!("PA".parse::<View>().unwrap(), View::Pa);
        assert_eq!("Lateral".parse::<View>().unwrap(), View::Lateral);
        assert_eq!("LL".parse::<View>().unwrap(), View::Lateral);
        assert_eq!("XR-UNKNOWN".parse::<View>().unwrap(), View::Other);
        assert!("".parse::<View>().is_err());
        assert!(View::Ap.is_frontal());
        assert!(View::Pa.is_frontal());
        assert!(!View::Lateral.is_frontal());
        assert!(!View::Other.is_frontal());
    }

    #[test]
    fn chains_priors_in_timestamp_order() {
        let vocab = small_vocab();
        let scans = vec![
            // Metadata arrives out of chronological order on purpose.
            scan("p1", "s2", "c2", View::Ap, ts(10, 8)),
            scan("p1", "s1", "c1", View::Pa, ts(5, 8)),
            scan("p1", "s3", "c3", View::Ap, ts(20, 8)),
        ];
        let store = store_for(&scans, &vocab);
        let outcome = build_longitudinal_pairs(&scans, &store, 0).unwrap();
        assert_eq!(outcome.excluded_no_frontal, 0);
        assert_eq!(outcome.pairs.len(), 3);
        assert!(outcome.pairs[0].is_initial());
        assert_eq!(outcome.pairs[0].current_study_id, "s1");
        assert_eq!(outcome.pairs[1].prior_study_id.as_deref(), Some("s1"));
        assert_eq!(outcome.pairs[2].prior_study_id.as_deref(), Some("s2"));
    }

    #[test]
    fn lateral_only_study_skipped_in_both_roles() {
        let vocab = small_vocab();
        let scans = vec![
            scan("p1", "s1", "c1", View::Pa, ts(1, 8)),
            scan("p1", "s2", "c2", View::Lateral, ts(2, 8)),
            scan("p1", "s3", "c3", View::Ap, ts(3, 8)),
        ];
        let store = store_for(&scans, &vocab);
        let outcome = build_longitudinal_pairs(&scans, &store, 0).unwrap();
        assert_eq!(outcome.excluded_no_frontal, 1);
        assert_eq!(outcome.pairs.len(), 2);
        // s2 is invisible: s3's prior reaches back to s1.
        assert_eq!(outcome.pairs[1].current_study_id, "s3");
        assert_eq!(outcome.pairs[1].prior_study_id.as_deref(), Some("s1"));
    }

    #[test]
    fn other_views_treated_like_lateral() {
        let vocab = small_vocab();
        let scans = vec![scan("p1", "s1", "c1", View::Other, ts(1, 8))];
        let store = store_for(&scans, &vocab);
        let outcome = build_longitudinal_pairs(&scans, &store, 0).unwrap();
        assert!(outcome.pairs.is_empty());
        assert_eq!(outcome.excluded_no_frontal, 1);
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let vocab = small_vocab();
        let scans = vec![
            scan("p1", "s1", "c1", View::Ap, ts(1, 8)),
            scan("p1", "s2", "c2", View::Ap, ts(1, 8)),
        ];
        let store = store_for(&scans, &vocab);
        assert!(matches!(
            build_longitudinal_pairs(&scans, &store, 0),
            Err(LongitudinalError::DuplicateTimestamp { .. })
        ));
    }

    #[test]
    fn patients_do_not_share_history() {
        let vocab = small_vocab();
        let scans = vec![
            scan("p1", "s1", "c1", View::Ap, ts(1, 8)),
            scan("p2", "s2", "c2", View::Ap, ts(2, 8)),
        ];
        let store = store_for(&scans, &vocab);
        let outcome = build_longitudinal_pairs(&scans, &store, 0).unwrap();
        assert_eq!(outcome.pairs.len(), 2);
        assert!(outcome.pairs.iter().all(LongitudinalPair::is_initial));
    }

    #[test]
    fn mixed_report_ids_within_study_rejected() {
        let mut a = scan("p1", "s1", "c1", View::Ap, ts(1, 8));
        let b = scan("p1", "s1", "c2", View::Pa, ts(1, 9));
        a.report_id = "other".into();
        assert!(matches!(
            group_studies(&[a, b]),
            Err(LongitudinalError::ConflictingReportId { .. })
        ));
    }

    #[test]
    fn scan_selection_prefers_most_present_tokens() {
        let vocab = small_vocab();
        let scans = vec![
            scan("p1", "s1", "sparse", View::Ap, ts(1, 8)),
            scan("p1", "s1", "dense", View::Pa, ts(1, 8)),
            scan("p1", "s1", "side", View::Lateral, ts(1, 8)),
        ];
        let mut store = TokenStore::new();
        store.insert("s1", "sparse", tokens_with_presence(&vocab, 1));
        store.insert("s1", "dense", tokens_with_presence(&vocab, 2));
        store.insert("s1", "side", tokens_with_presence(&vocab, 2));
        let study = &group_studies(&scans).unwrap()[0];
        // The lateral scan is ignored even though it ties on token count.
        let chosen = select_scan_within_study(study, &store, 0).unwrap();
        assert_eq!(chosen.scan_id, "dense");
    }

    #[test]
    fn scan_selection_tie_break_is_seed_stable_and_roughly_even() {
        let vocab = small_vocab();
        let scans = vec![
            scan("p1", "s1", "alpha", View::Ap, ts(1, 8)),
            scan("p1", "s1", "beta", View::Pa, ts(1, 8)),
        ];
        let mut store = TokenStore::new();
        store.insert("s1", "alpha", tokens_with_presence(&vocab, 1));
        store.insert("s1", "beta", tokens_with_presence(&vocab, 1));
        let study = &group_studies(&scans).unwrap()[0];

        let first = select_scan_within_study(study, &store, 42).unwrap().scan_id.clone();
        let second = select_scan_within_study(study, &store, 42).unwrap().scan_id.clone();
        assert_eq!(first, second);

        let mut alpha_wins = 0;
        for seed in 0..100 {
            if select_scan_within_study(study, &store, seed).unwrap().scan_id == "alpha" {
                alpha_wins += 1;
            }
        }
        assert!(
            (35..=65).contains(&alpha_wins),
            "alpha won {alpha_wins}/100 tie-breaks"
        );
    }

    #[test]
    fn no_frontal_scan_is_an_error() {
        let vocab = small_vocab();
        let scans = vec![scan("p1", "s1", "c1", View::Lateral, ts(1, 8))];
        let store = store_for(&scans, &vocab);
        let study = &group_studies(&scans).unwrap()[0];
        assert!(matches!(
            select_scan_within_study(study, &store, 0),
            Err(LongitudinalError::NoFrontalScan { .. })
        ));
    }

    #[test]
    fn missing_tokens_is_an_error() {
        let scans = vec![scan("p1", "s1", "c1", View::Ap, ts(1, 8))];
        let store = TokenStore::new();
        let study = &group_studies(&scans).unwrap()[0];
        assert!(matches!(
            select_scan_within_study(study, &store, 0),
            Err(LongitudinalError::MissingTokens { .. })
        ));
    }

    #[test]
    fn initial_exam_gets_zero_prior() {
        let vocab = small_vocab();
        let scans = vec![
            scan("p1", "s1", "c1", View::Ap, ts(1, 8)),
            scan("p1", "s2", "c2", View::Ap, ts(2, 8)),
        ];
        let store = store_for(&scans, &vocab);
        let outcome = build_longitudinal_pairs(&scans, &store, 0).unwrap();
        let aligned = align_token_sets(&outcome.pairs, &store, &vocab, 2).unwrap();
        assert_eq!(aligned.len(), 2);

        let initial = &aligned[0];
        assert!(initial.prior.entries.iter().all(|e| !e.present));
        assert!(initial
            .prior
            .entries
            .iter()
            .all(|e| e.vector.iter().all(|&x| x == 0.0)));

        let followup = &aligned[1];
        assert_eq!(followup.prior, store.get("s1", "c1").unwrap().clone());
    }

    #[test]
    fn study_timestamp_is_earliest_scan() {
        let scans = vec![
            scan("p1", "s1", "late", View::Ap, ts(1, 12)),
            scan("p1", "s1", "early", View::Pa, ts(1, 8)),
        ];
        let studies = group_studies(&scans).unwrap();
        assert_eq!(studies[0].timestamp, ts(1, 8));
    }
}
