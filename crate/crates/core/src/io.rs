//! File formats: JSON-lines corpora, the scan metadata table, per-scan
//! token files, and projection parameter files.
//!
//! Formats on disk:
//! - corpus / pairs / partitions / samples / labels / texts: one JSON
//!   object per line;
//! - scan metadata: CSV with header
//!   `patient_id,study_id,scan_id,view,timestamp,report_id`, RFC 3339
//!   timestamps;
//! - token files: one JSON object per line with `study_id`, `scan_id`,
//!   `d`, and a `regions` map holding vectors for present regions only;
//! - projection parameters: a single JSON document with explicit matrix
//!   shapes.

use crate::corpus::AnatomicalTokenSet;
use crate::fusion::ProjectionParams;
use crate::longitudinal::{ScanRecord, TokenStore, View};
use crate::vocab::RegionVocabulary;
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("failed to read `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write `{path}`: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("`{path}` line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("`{path}` record {record}: {message}")]
    Csv {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("`{path}`: {message}")]
    Invalid { path: PathBuf, message: String },
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let write_err = |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(write_err)?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        out.write_all(line.as_bytes()).map_err(write_err)?;
        out.write_all(b"\n").map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

/// Reads one pretty or compact JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

/// Writes a pretty-printed JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// One generated or reference text, keyed by report and sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub report_id: String,
    pub sample_index: usize,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetadataRow {
    patient_id: String,
    study_id: String,
    scan_id: String,
    view: String,
    timestamp: String,
    report_id: String,
}

/// Reads the scan metadata table.
pub fn read_metadata_csv(path: &Path) -> Result<Vec<ScanRecord>, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| IoError::Csv {
        path: path.to_path_buf(),
        record: 0,
        message: e.to_string(),
    })?;
    let mut scans = Vec::new();
    for (i, row) in reader.deserialize::<MetadataRow>().enumerate() {
        let record = i + 1;
        let csv_err = |message: String| IoError::Csv {
            path: path.to_path_buf(),
            record,
            message,
        };
        let row = row.map_err(|e| csv_err(e.to_string()))?;
        let view: View = row
            .view
            .parse()
            .map_err(|e| csv_err(format!("bad view `{}`: {e}", row.view)))?;
        let timestamp = DateTime::parse_from_rfc3339(&row.timestamp)
            .map_err(|e| csv_err(format!("bad timestamp `{}`: {e}", row.timestamp)))?
            .with_timezone(&Utc);
        scans.push(ScanRecord {
            patient_id: row.patient_id,
            study_id: row.study_id,
            scan_id: row.scan_id,
            view,
            timestamp,
            report_id: row.report_id,
        });
    }
    Ok(scans)
}

/// Writes the scan metadata table.
pub fn write_metadata_csv(path: &Path, scans: &[ScanRecord]) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IoError::Csv {
        path: path.to_path_buf(),
        record: 0,
        message: e.to_string(),
    })?;
    for (i, scan) in scans.iter().enumerate() {
        let row = MetadataRow {
            patient_id: scan.patient_id.clone(),
            study_id: scan.study_id.clone(),
            scan_id: scan.scan_id.clone(),
            view: scan.view.to_string(),
            timestamp: scan.timestamp.to_rfc3339(),
            report_id: scan.report_id.clone(),
        };
        writer.serialize(row).map_err(|e| IoError::Csv {
            path: path.to_path_buf(),
            record: i + 1,
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// On-disk form of one scan's tokens: vectors for present regions only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenFileRecord {
    pub study_id: String,
    pub scan_id: String,
    pub d: usize,
    pub regions: BTreeMap<String, Vec<f64>>,
}

/// Loads a token file into a store, expanding absent regions to zero
/// vectors. Returns the token width, which must agree across records
/// (`None` for an empty file).
pub fn load_token_store(
    path: &Path,
    vocab: &RegionVocabulary,
) -> Result<(TokenStore, Option<usize>), IoError> {
    let records: Vec<TokenFileRecord> = read_jsonl(path)?;
    let mut store = TokenStore::new();
    let mut width: Option<usize> = None;
    for record in records {
        match width {
            None => width = Some(record.d),
            Some(d) if d != record.d => {
                return Err(IoError::Invalid {
                    path: path.to_path_buf(),
                    message: format!(
                        "token width {} for scan `{}` conflicts with earlier width {d}",
                        record.d, record.scan_id
                    ),
                });
            }
            Some(_) => {}
        }
        let tokens = AnatomicalTokenSet::from_present(vocab, record.d, &record.regions)
            .map_err(|message| IoError::Invalid {
                path: path.to_path_buf(),
                message: format!("scan `{}`: {message}", record.scan_id),
            })?;
        store.insert(&record.study_id, &record.scan_id, tokens);
    }
    Ok((store, width))
}

/// Loads and validates projection parameters.
pub fn load_projection_params(path: &Path) -> Result<ProjectionParams, IoError> {
    let params: ProjectionParams = read_json(path)?;
    params.validate().map_err(|e| IoError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn jsonl_roundtrip_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("texts.jsonl");
        let records = vec![
            TextRecord {
                report_id: "r1".into(),
                sample_index: 0,
                text: "No acute disease.".into(),
            },
            TextRecord {
                report_id: "r2".into(),
                sample_index: 1,
                text: "Stable appearance.".into(),
            },
        ];
        write_jsonl(&path, &records).unwrap();
        // Blank lines are tolerated.
        let mut content = std::fs::read_to_string(&path).unwrap();
        content.push('\n');
        std::fs::write(&path, content).unwrap();
        let back: Vec<TextRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn jsonl_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"report_id\":\"r\",\"sample_index\":0,\"text\":\"x\"}\nnot json\n")
            .unwrap();
        let err = read_jsonl::<TextRecord>(&path).unwrap_err();
        assert!(matches!(err, IoError::Json { line: 2, .. }), "{err}");
    }

    #[test]
    fn metadata_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metadata.csv");
        let scans = vec![ScanRecord {
            patient_id: "p1".into(),
            study_id: "s1".into(),
            scan_id: "c1".into(),
            view: View::Pa,
            timestamp: Utc.with_ymd_and_hms(2024, 5, 1, 9, 30, 0).unwrap(),
            report_id: "r1".into(),
        }];
        write_metadata_csv(&path, &scans).unwrap();
        let back = read_metadata_csv(&path).unwrap();
        assert_eq!(back, scans);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patient_id,study_id,scan_id,view,timestamp,report_id"));
    }

    #[test]
    fn metadata_csv_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metadata.csv");
        std::fs::write(
            &path,
            "patient_id,study_id,scan_id,view,timestamp,report_id\np1,s1,c1,PA,yesterday,r1\n",
        )
        .unwrap();
        let err = read_metadata_csv(&path).unwrap_err();
        assert!(matches!(err, IoError::Csv { record: 1, .. }), "{err}");
    }

    #[test]
    fn token_store_roundtrip_with_zero_fill() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.jsonl");
        let vocab =
            RegionVocabulary::new(["abdomen", "left lung"]).unwrap();
        let records = vec![TokenFileRecord {
            study_id: "s1".into(),
            scan_id: "c1".into(),
            d: 3,
            regions: BTreeMap::from([("left lung".to_string(), vec![1.0, 2.0, 3.0])]),
        }];
        write_jsonl(&path, &records).unwrap();
        let (store, width) = load_token_store(&path, &vocab).unwrap();
        assert_eq!(width, Some(3));
        let tokens = store.get("s1", "c1").unwrap();
        assert!(!tokens.entries[0].present);
        assert_eq!(tokens.entries[0].vector, vec![0.0; 3]);
        assert!(tokens.entries[1].present);
        assert_eq!(tokens.entries[1].vector, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn token_store_rejects_width_conflicts_and_unknown_regions() {
        let dir = tempfile::tempdir().unwrap();
        let vocab =
            RegionVocabulary::new(["abdomen", "left lung"]).unwrap();

        let path = dir.path().join("conflict.jsonl");
        let records = vec![
            TokenFileRecord {
                study_id: "s1".into(),
                scan_id: "c1".into(),
                d: 3,
                regions: BTreeMap::new(),
            },
            TokenFileRecord {
                study_id: "s1".into(),
                scan_id: "c2".into(),
                d: 4,
                regions: BTreeMap::new(),
            },
        ];
        write_jsonl(&path, &records).unwrap();
        assert!(matches!(
            load_token_store(&path, &vocab),
            Err(IoError::Invalid { .. })
        ));

        let path = dir.path().join("unknown.jsonl");
        let records = vec![TokenFileRecord {
            study_id: "s1".into(),
            scan_id: "c1".into(),
            d: 2,
            regions: BTreeMap::from([("flank".to_string(), vec![0.0, 0.0])]),
        }];
        write_jsonl(&path, &records).unwrap();
        assert!(matches!(
            load_token_store(&path, &vocab),
            Err(IoError::Invalid { .. })
        ));
    }

    #[test]
    fn projection_params_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let params = ProjectionParams::random(3, 2, 5);
        write_json(&path, &params).unwrap();
        assert_eq!(load_projection_params(&path).unwrap(), params);

        let mut broken = params;
        broken.b1.pop();
        write_json(&path, &broken).unwrap();
        assert!(matches!(
            load_projection_params(&path),
            Err(IoError::Invalid { .. })
        ));

        // Shape headers are explicit in the file.
        write_json(&path, &ProjectionParams::identity(2)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"rows\""));
        assert!(text.contains("\"cols\""));
    }

    #[test]
    fn missing_file_is_a_read_error() {
        let err = read_jsonl::<TextRecord>(Path::new("/nonexistent/x.jsonl")).unwrap_err();
        assert!(matches!(err, IoError::Read { .. }));
    }
}
