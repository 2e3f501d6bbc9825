//! End-to-end pipeline: ingest, pair, partition, sample, fuse, generate,
//! evaluate, with a manifest tying one run together.
//!
//! Stages are plain functions over typed values so they can be driven
//! individually (the CLI does) or composed by [`run_pipeline`], which wires
//! them to the standard file layout and writes every intermediate artifact
//! into the output directory.

use crate::anatomy::{
    build_partial_eval_set, find_valid_subsets, sample_dropout, DropoutOptions, DropoutSample,
    ValidPartition,
};
use crate::corpus::{
    build_annotated_report, AnnotatedReport, AnnotationRecord, CorpusError, SectionConfig,
};
use crate::fusion::{
    assemble_multimodal, build_joint_representation, EmbedTables, FusionError,
    JointRepresentation, ProjectionParams, ReportGenerator, TemplateGenerator,
};
use crate::io::{
    load_token_store, read_jsonl, read_metadata_csv, write_json, write_jsonl, IoError, TextRecord,
};
use crate::longitudinal::{
    align_token_sets, build_longitudinal_pairs, group_studies, LongitudinalError,
    LongitudinalPair, PairingOutcome, TokenStore,
};
use crate::metrics::{evaluate, label_report, Average, EvalReport, FindingLabelSet, MetricsError};
use crate::seed::derive_seed;
use crate::synth;
use crate::vocab::RegionVocabulary;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Io {
        stage: &'static str,
        #[source]
        source: IoError,
    },
    #[error("{stage}: {source}")]
    Corpus {
        stage: &'static str,
        #[source]
        source: CorpusError,
    },
    #[error("{stage}: {source}")]
    Longitudinal {
        stage: &'static str,
        #[source]
        source: LongitudinalError,
    },
    #[error("{stage}: {source}")]
    Fusion {
        stage: &'static str,
        #[source]
        source: FusionError,
    },
    #[error("{stage}: {source}")]
    Metrics {
        stage: &'static str,
        #[source]
        source: MetricsError,
    },
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
}

/// Everything a run depends on besides its input files. Deliberately free
/// of filesystem paths so two runs over the same data compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub global_seed: u64,
    /// Dropout samples drawn per report.
    pub samples_per_report: usize,
    /// Chance of forcing the full-report case per draw.
    pub full_report_probability: f64,
    /// Projection output width per region.
    pub joint_dim: usize,
    /// Assembled sequence width.
    pub embed_width: usize,
    /// Position table size; bounds sequence length.
    pub max_positions: usize,
    /// Keep masked regions in the assembled sequence.
    pub include_masked: bool,
    pub ce_average: Average,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            global_seed: 0,
            samples_per_report: 1,
            full_report_probability: 0.0,
            joint_dim: 8,
            embed_width: 8,
            max_positions: 64,
            include_masked: true,
            ce_average: Average::Micro,
        }
    }
}

/// Record counts per stage, reported in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub reports: usize,
    pub studies: usize,
    pub scans: usize,
    pub pairs: usize,
    pub initial_exams: usize,
    pub excluded_no_frontal: usize,
    pub reports_without_subsets: usize,
    pub subsets_total: usize,
    pub samples: usize,
    pub full_report_samples: usize,
    pub fused: usize,
    pub skipped_unpaired: usize,
    pub generated: usize,
    pub partial_eval_instances: usize,
}

/// Run summary written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub created_at: DateTime<Utc>,
    pub settings: PipelineSettings,
    pub counts: StageCounts,
    pub eval: EvalReport,
}

impl Manifest {
    /// Equality up to the creation timestamp.
    pub fn same_content(&self, other: &Manifest) -> bool {
        self.tool_version == other.tool_version
            && self.settings == other.settings
            && self.counts == other.counts
            && self.eval == other.eval
    }
}

/// One dropout sample with its position among a report's draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_index: usize,
    #[serde(flatten)]
    pub sample: DropoutSample,
}

/// One fused representation, keyed like its sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub report_id: String,
    pub sample_index: usize,
    pub joint: JointRepresentation,
}

/// Builds reports from raw texts plus annotations, sorted by report id.
///
/// Every raw report must have at least one annotation record and vice
/// versa; the cross-check inside [`build_annotated_report`] then ties the
/// two sources together.
pub fn ingest_reports(
    raw_reports: &[synth::RawReportRecord],
    annotations: &[AnnotationRecord],
    config: &SectionConfig,
    vocab: &RegionVocabulary,
) -> Result<Vec<AnnotatedReport>, PipelineError> {
    const STAGE: &str = "ingest";
    let mut by_report: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for record in annotations {
        by_report
            .entry(record.report_id.as_str())
            .or_default()
            .push(record.clone());
    }

    let mut reports = Vec::with_capacity(raw_reports.len());
    let mut seen = std::collections::BTreeSet::new();
    for raw in raw_reports {
        if !seen.insert(raw.report_id.as_str()) {
            return Err(PipelineError::Data {
                stage: STAGE,
                message: format!("duplicate raw report id `{}`", raw.report_id),
            });
        }
        let records = by_report.remove(raw.report_id.as_str()).ok_or_else(|| {
            PipelineError::Data {
                stage: STAGE,
                message: format!("no annotations for report `{}`", raw.report_id),
            }
        })?;
        let report =
            build_annotated_report(&raw.report_id, &raw.text, &records, config, vocab)
                .map_err(|source| PipelineError::Corpus {
                    stage: STAGE,
                    source,
                })?;
        reports.push(report);
    }
    if let Some((report_id, _)) = by_report.into_iter().next() {
        return Err(PipelineError::Data {
            stage: STAGE,
            message: format!("annotations reference unknown report `{report_id}`"),
        });
    }
    reports.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    Ok(reports)
}

/// Partitions every report, in input order.
pub fn partition_reports(reports: &[AnnotatedReport]) -> Vec<ValidPartition> {
    reports.iter().map(find_valid_subsets).collect()
}

/// Draws `samples_per_report` dropout samples per report. Reports without
/// any valid subset are skipped and counted.
pub fn sample_reports(
    reports: &[AnnotatedReport],
    partitions: &[ValidPartition],
    vocab: &RegionVocabulary,
    settings: &PipelineSettings,
) -> Result<(Vec<SampleRecord>, usize), PipelineError> {
    const STAGE: &str = "sample";
    if reports.len() != partitions.len() {
        return Err(PipelineError::Data {
            stage: STAGE,
            message: format!(
                "{} reports but {} partitions",
                reports.len(),
                partitions.len()
            ),
        });
    }
    let options = DropoutOptions {
        full_report_probability: settings.full_report_probability,
    };
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (report, partition) in reports.iter().zip(partitions) {
        if report.report_id != partition.report_id {
            return Err(PipelineError::Data {
                stage: STAGE,
                message: format!(
                    "partition `{}` does not match report `{}`",
                    partition.report_id, report.report_id
                ),
            });
        }
        if partition.subsets.is_empty() {
            skipped += 1;
            continue;
        }
        for index in 0..settings.samples_per_report {
            let seed = derive_seed(
                settings.global_seed,
                &["sample", &report.report_id, &index.to_string()],
            );
            let sample = sample_dropout(report, partition, vocab, seed, &options)
                .map_err(|e| PipelineError::Data {
                    stage: STAGE,
                    message: e.to_string(),
                })?;
            samples.push(SampleRecord {
                sample_index: index,
                sample,
            });
        }
    }
    Ok((samples, skipped))
}

/// Fuses each sample with its report's current/prior token sets. Samples
/// whose report has no longitudinal pair are skipped; the second return
/// value counts them.
pub fn fuse_samples(
    samples: &[SampleRecord],
    pairs: &[LongitudinalPair],
    store: &TokenStore,
    vocab: &RegionVocabulary,
    params: &ProjectionParams,
) -> Result<(Vec<JointRecord>, usize), PipelineError> {
    const STAGE: &str = "fuse";
    let aligned = align_token_sets(pairs, store, vocab, params.token_dim())
        .map_err(|source| PipelineError::Longitudinal {
            stage: STAGE,
            source,
        })?;
    let by_report: BTreeMap<&str, usize> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.report_id.as_str(), i))
        .collect();

    let mut joints = Vec::new();
    let mut skipped = 0usize;
    for record in samples {
        let Some(&i) = by_report.get(record.sample.report_id.as_str()) else {
            skipped += 1;
            continue;
        };
        let joint = build_joint_representation(
            &aligned[i].current,
            &aligned[i].prior,
            &record.sample.a_target,
            vocab,
            params,
        )
        .map_err(|source| PipelineError::Fusion {
            stage: STAGE,
            source,
        })?;
        joints.push(JointRecord {
            report_id: record.sample.report_id.clone(),
            sample_index: record.sample_index,
            joint,
        });
    }
    Ok((joints, skipped))
}

/// Runs the generator over each fused sample and pairs its output with the
/// sample's target text. Returns (generated, references), aligned index by
/// index and sorted by (report id, sample index).
pub fn generate_texts(
    joints: &[JointRecord],
    samples: &[SampleRecord],
    vocab: &RegionVocabulary,
    tables: &EmbedTables,
    generator: &dyn ReportGenerator,
) -> Result<(Vec<TextRecord>, Vec<TextRecord>), PipelineError> {
    const STAGE: &str = "generate";
    let targets: BTreeMap<(&str, usize), &str> = samples
        .iter()
        .map(|r| {
            (
                (r.sample.report_id.as_str(), r.sample_index),
                r.sample.target_text.as_str(),
            )
        })
        .collect();

    let mut generated = Vec::with_capacity(joints.len());
    let mut references = Vec::with_capacity(joints.len());
    for record in joints {
        let key = (record.report_id.as_str(), record.sample_index);
        let target = targets.get(&key).ok_or_else(|| PipelineError::Data {
            stage: STAGE,
            message: format!(
                "no sample behind fused record `{}` #{}",
                record.report_id, record.sample_index
            ),
        })?;
        let sequence = assemble_multimodal(&record.joint, vocab, &[], tables)
            .map_err(|source| PipelineError::Fusion {
                stage: STAGE,
                source,
            })?;
        generated.push(TextRecord {
            report_id: record.report_id.clone(),
            sample_index: record.sample_index,
            text: generator.generate(&sequence),
        });
        references.push(TextRecord {
            report_id: record.report_id.clone(),
            sample_index: record.sample_index,
            text: target.to_string(),
        });
    }

    let key = |r: &TextRecord| (r.report_id.clone(), r.sample_index);
    generated.sort_by_key(key);
    references.sort_by_key(key);
    Ok((generated, references))
}

/// Scores generated texts against references. Records are matched by
/// (report id, sample index); both sides must cover the same keys. When no
/// label files are supplied, the rule labeler is run on both sides.
pub fn evaluate_records(
    generated: &[TextRecord],
    references: &[TextRecord],
    labels: Option<(&[FindingLabelSet], &[FindingLabelSet])>,
    average: Average,
) -> Result<EvalReport, PipelineError> {
    const STAGE: &str = "evaluate";
    let index = |records: &[TextRecord]| -> BTreeMap<(String, usize), String> {
        records
            .iter()
            .map(|r| ((r.report_id.clone(), r.sample_index), r.text.clone()))
            .collect()
    };
    let gen_map = index(generated);
    let ref_map = index(references);
    if gen_map.len() != generated.len() {
        return Err(PipelineError::Data {
            stage: STAGE,
            message: "duplicate (report id, sample index) among generated texts".into(),
        });
    }
    if let Some(key) = gen_map
        .keys()
        .find(|k| !ref_map.contains_key(*k))
        .or_else(|| ref_map.keys().find(|k| !gen_map.contains_key(*k)))
    {
        return Err(PipelineError::Data {
            stage: STAGE,
            message: format!("unmatched record `{}` #{}", key.0, key.1),
        });
    }

    let mut gen_texts = Vec::with_capacity(gen_map.len());
    let mut ref_texts = Vec::with_capacity(ref_map.len());
    let mut gen_labels = Vec::new();
    let mut ref_labels = Vec::new();
    for (key, gen_text) in &gen_map {
        let ref_text = &ref_map[key];
        if labels.is_none() {
            let id = format!("{}#{}", key.0, key.1);
            gen_labels.push(label_report(&id, gen_text));
            ref_labels.push(label_report(&id, ref_text));
        }
        gen_texts.push(gen_text.clone());
        ref_texts.push(ref_text.clone());
    }

    let report = match labels {
        Some(pair) => evaluate(&gen_texts, &ref_texts, Some(pair), average),
        None => evaluate(
            &gen_texts,
            &ref_texts,
            Some((&gen_labels, &ref_labels)),
            average,
        ),
    }
    .map_err(|source| PipelineError::Metrics {
        stage: STAGE,
        source,
    })?;
    Ok(report)
}

fn io_err(stage: &'static str) -> impl Fn(IoError) -> PipelineError {
    move |source| PipelineError::Io { stage, source }
}

/// Runs every stage over a dataset directory and writes all artifacts into
/// `out_dir`:
///
/// `corpus.jsonl`, `pairs.jsonl`, `partitions.jsonl`, `samples.jsonl`,
/// `joint.jsonl`, `generated.jsonl`, `references.jsonl`,
/// `partial_eval.jsonl`, `eval.json` and `manifest.json`.
pub fn run_pipeline(
    data_dir: &Path,
    out_dir: &Path,
    settings: &PipelineSettings,
) -> Result<Manifest, PipelineError> {
    let vocab = RegionVocabulary::default_regions();
    let section_config = SectionConfig::default();
    std::fs::create_dir_all(out_dir).map_err(|source| {
        io_err("setup")(IoError::Write {
            path: out_dir.to_path_buf(),
            source,
        })
    })?;
    let mut counts = StageCounts::default();

    // Ingest.
    let raw_reports: Vec<synth::RawReportRecord> =
        read_jsonl(&data_dir.join(synth::RAW_REPORTS_FILE)).map_err(io_err("ingest"))?;
    let annotations: Vec<AnnotationRecord> =
        read_jsonl(&data_dir.join(synth::ANNOTATIONS_FILE)).map_err(io_err("ingest"))?;
    let reports = ingest_reports(&raw_reports, &annotations, &section_config, &vocab)?;
    counts.reports = reports.len();
    write_jsonl(&out_dir.join("corpus.jsonl"), &reports).map_err(io_err("ingest"))?;

    // Pair.
    let scans = read_metadata_csv(&data_dir.join(synth::METADATA_FILE)).map_err(io_err("pair"))?;
    let (store, token_dim) =
        load_token_store(&data_dir.join(synth::TOKENS_FILE), &vocab).map_err(io_err("pair"))?;
    let token_dim = token_dim.ok_or_else(|| PipelineError::Data {
        stage: "pair",
        message: "token file holds no records".into(),
    })?;
    counts.scans = scans.len();
    counts.studies = group_studies(&scans)
        .map_err(|source| PipelineError::Longitudinal {
            stage: "pair",
            source,
        })?
        .len();
    let PairingOutcome {
        mut pairs,
        excluded_no_frontal,
    } = build_longitudinal_pairs(&scans, &store, settings.global_seed).map_err(|source| {
        PipelineError::Longitudinal {
            stage: "pair",
            source,
        }
    })?;
    pairs.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    counts.pairs = pairs.len();
    counts.initial_exams = pairs.iter().filter(|p| p.is_initial()).count();
    counts.excluded_no_frontal = excluded_no_frontal;
    write_jsonl(&out_dir.join("pairs.jsonl"), &pairs).map_err(io_err("pair"))?;

    // Partition.
    let partitions = partition_reports(&reports);
    counts.subsets_total = partitions.iter().map(|p| p.subsets.len()).sum();
    write_jsonl(&out_dir.join("partitions.jsonl"), &partitions).map_err(io_err("partition"))?;

    // Sample.
    let (samples, without_subsets) = sample_reports(&reports, &partitions, &vocab, settings)?;
    counts.reports_without_subsets = without_subsets;
    counts.samples = samples.len();
    counts.full_report_samples = samples.iter().filter(|s| s.sample.is_full_report).count();
    write_jsonl(&out_dir.join("samples.jsonl"), &samples).map_err(io_err("sample"))?;

    // Fuse.
    let params = ProjectionParams::random(
        token_dim,
        settings.joint_dim,
        derive_seed(settings.global_seed, &["projection-params"]),
    );
    let (joints, skipped_unpaired) = fuse_samples(&samples, &pairs, &store, &vocab, &params)?;
    counts.fused = joints.len();
    counts.skipped_unpaired = skipped_unpaired;
    write_jsonl(&out_dir.join("joint.jsonl"), &joints).map_err(io_err("fuse"))?;

    // Generate.
    let mut tables = EmbedTables::random(
        settings.embed_width,
        settings.joint_dim,
        16,
        settings.max_positions,
        derive_seed(settings.global_seed, &["embed-tables"]),
    );
    tables.include_masked = settings.include_masked;
    let (generated, references) =
        generate_texts(&joints, &samples, &vocab, &tables, &TemplateGenerator)?;
    counts.generated = generated.len();
    write_jsonl(&out_dir.join("generated.jsonl"), &generated).map_err(io_err("generate"))?;
    write_jsonl(&out_dir.join("references.jsonl"), &references).map_err(io_err("generate"))?;

    // Partial-report evaluation set.
    let partial = build_partial_eval_set(&reports);
    counts.partial_eval_instances = partial.len();
    write_jsonl(&out_dir.join("partial_eval.jsonl"), &partial).map_err(io_err("evaluate"))?;

    // Evaluate.
    let eval = evaluate_records(&generated, &references, None, settings.ce_average)?;
    write_json(&out_dir.join("eval.json"), &eval).map_err(io_err("evaluate"))?;

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: Utc::now(),
        settings: settings.clone(),
        counts,
        eval,
    };
    write_json(&out_dir.join("manifest.json"), &manifest).map_err(io_err("manifest"))?;
    Ok(manifest)
}
