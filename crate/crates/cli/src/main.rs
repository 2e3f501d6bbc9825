//! `repgen` — drives the report-generation data pipeline stage by stage or
//! end to end.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 internal
//! failure (e.g. the output directory cannot be written).

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use repgen_core::corpus::{AnnotatedReport, AnnotationRecord, SectionConfig};
use repgen_core::fusion::{EmbedTables, ProjectionParams, TemplateGenerator};
use repgen_core::io::{
    load_projection_params, load_token_store, read_jsonl, read_metadata_csv, write_json,
    write_jsonl, IoError, TextRecord,
};
use repgen_core::longitudinal::{build_longitudinal_pairs, LongitudinalPair, PairingOutcome};
use repgen_core::metrics::{Average, FindingLabelSet};
use repgen_core::pipeline::{
    evaluate_records, fuse_samples, generate_texts, ingest_reports, partition_reports,
    run_pipeline, sample_reports, JointRecord, PipelineError, PipelineSettings, SampleRecord,
};
use repgen_core::seed::derive_seed;
use repgen_core::synth::{generate_corpus, write_corpus, RawReportRecord, SyntheticSpec};
use repgen_core::vocab::RegionVocabulary;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Environment override for the output directory; flags still win.
const OUT_DIR_ENV: &str = "REPGEN_OUT_DIR";

#[derive(Parser)]
#[command(name = "repgen", version, about = "Report-generation data pipeline")]
struct Cli {
    /// TOML file supplying default settings (see `repgen.toml` in the README).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory. Falls back to $REPGEN_OUT_DIR, then `out/`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Build annotated reports from raw texts plus sentence annotations.
    Ingest(IngestArgs),
    /// Pair each study with its most recent frontal prior.
    Pair(PairArgs),
    /// Split each report into its valid sentence-anatomy subsets.
    Partition(PartitionArgs),
    /// Draw sentence-anatomy dropout samples per report.
    Sample(SampleArgs),
    /// Fuse current and prior region tokens per sample.
    Fuse(FuseArgs),
    /// Assemble model inputs and run the report generator.
    Generate(GenerateArgs),
    /// Score generated texts against references.
    Evaluate(EvaluateArgs),
    /// Run every stage over a dataset directory.
    Run(RunArgs),
}

/// Settings flags shared by the stage commands; unset flags fall back to
/// the config file, then to built-in defaults.
#[derive(Args, Default, Clone)]
struct SettingsArgs {
    /// Seed every derived random stream starts from.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    full_report_probability: Option<f64>,
    #[arg(long)]
    joint_dim: Option<usize>,
    #[arg(long)]
    embed_width: Option<usize>,
    #[arg(long)]
    max_positions: Option<usize>,
    /// Drop masked regions from assembled sequences.
    #[arg(long)]
    drop_masked: bool,
    /// CE averaging: micro or macro.
    #[arg(long, value_parser = parse_average)]
    average: Option<Average>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    token_dim: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    raw: PathBuf,
    #[arg(long, value_name = "FILE")]
    annotations: PathBuf,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long, value_name = "FILE")]
    metadata: PathBuf,
    #[arg(long, value_name = "FILE")]
    tokens: PathBuf,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    partitions: PathBuf,
    #[arg(long, value_name = "K")]
    samples_per_report: Option<usize>,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long, value_name = "FILE")]
    samples: PathBuf,
    #[arg(long, value_name = "FILE")]
    pairs: PathBuf,
    #[arg(long, value_name = "FILE")]
    tokens: PathBuf,
    /// Projection parameters as JSON; omitted means seed-derived random.
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    joint: PathBuf,
    #[arg(long, value_name = "FILE")]
    samples: PathBuf,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    generated: PathBuf,
    #[arg(long, value_name = "FILE")]
    references: PathBuf,
    /// Labels for generated texts; both label flags or neither.
    #[arg(long, value_name = "FILE", requires = "reference_labels")]
    generated_labels: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "generated_labels")]
    reference_labels: Option<PathBuf>,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory holding raw reports, annotations, metadata, tokens.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "K")]
    samples_per_report: Option<usize>,
    #[command(flatten)]
    settings: SettingsArgs,
}

fn parse_average(value: &str) -> Result<Average, String> {
    match value {
        "micro" => Ok(Average::Micro),
        "macro" => Ok(Average::Macro),
        other => Err(format!("unknown average `{other}` (use micro or macro)")),
    }
}

/// Optional per-key settings from the config file; unset keys keep their
/// built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SettingsOverlay {
    global_seed: Option<u64>,
    samples_per_report: Option<usize>,
    full_report_probability: Option<f64>,
    joint_dim: Option<usize>,
    embed_width: Option<usize>,
    max_positions: Option<usize>,
    include_masked: Option<bool>,
    ce_average: Option<Average>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    pipeline: SettingsOverlay,
    synth: Option<SyntheticSpec>,
}

enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

/// Write failures are environmental, everything else reflects the inputs.
fn from_io(error: IoError) -> CliError {
    match &error {
        IoError::Write { .. } => CliError::Internal(error.into()),
        _ => CliError::Data(error.into()),
    }
}

fn from_pipeline(error: PipelineError) -> CliError {
    match &error {
        PipelineError::Io {
            source: IoError::Write { .. },
            ..
        } => CliError::Internal(error.into()),
        _ => CliError::Data(error.into()),
    }
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let _ = error.print();
            return match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(error) => {
            let code = error.code();
            match error {
                CliError::Usage(message) => eprintln!("error: {message}"),
                CliError::Data(error) => eprintln!("error: {error:#}"),
                CliError::Internal(error) => eprintln!("internal error: {error:#}"),
            }
            code
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn resolve_out(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Defaults, then the config file, then flags.
fn resolve_settings(overlay: &SettingsOverlay, flags: &SettingsArgs) -> PipelineSettings {
    let mut settings = PipelineSettings::default();
    let o = overlay;
    if let Some(v) = o.global_seed {
        settings.global_seed = v;
    }
    if let Some(v) = o.samples_per_report {
        settings.samples_per_report = v;
    }
    if let Some(v) = o.full_report_probability {
        settings.full_report_probability = v;
    }
    if let Some(v) = o.joint_dim {
        settings.joint_dim = v;
    }
    if let Some(v) = o.embed_width {
        settings.embed_width = v;
    }
    if let Some(v) = o.max_positions {
        settings.max_positions = v;
    }
    if let Some(v) = o.include_masked {
        settings.include_masked = v;
    }
    if let Some(v) = o.ce_average {
        settings.ce_average = v;
    }
    if let Some(v) = flags.seed {
        settings.global_seed = v;
    }
    if let Some(v) = flags.full_report_probability {
        settings.full_report_probability = v;
    }
    if let Some(v) = flags.joint_dim {
        settings.joint_dim = v;
    }
    if let Some(v) = flags.embed_width {
        settings.embed_width = v;
    }
    if let Some(v) = flags.max_positions {
        settings.max_positions = v;
    }
    if flags.drop_masked {
        settings.include_masked = false;
    }
    if let Some(v) = flags.average {
        settings.ce_average = v;
    }
    settings
}

fn ensure_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| {
        CliError::Internal(anyhow::anyhow!("cannot create {}: {e}", out.display()))
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let out = resolve_out(cli.out);
    let vocab = RegionVocabulary::default_regions();

    match cli.command {
        Command::Synth(args) => {
            let mut spec = config.synth.unwrap_or_default();
            if let Some(patients) = args.patients {
                spec.patients = patients;
            }
            if let Some(token_dim) = args.token_dim {
                spec.token_dim = token_dim;
            }
            let seed = args.seed.or(config.pipeline.global_seed).unwrap_or(0);
            let corpus = generate_corpus(&spec, seed).map_err(|e| CliError::Data(e.into()))?;
            ensure_out(&out)?;
            write_corpus(&out, &corpus).map_err(from_io)?;
            println!(
                "synth: {} patients, {} studies, {} reports -> {}",
                corpus.sidecar.counts.patients,
                corpus.sidecar.counts.studies,
                corpus.sidecar.counts.reports,
                out.display()
            );
        }
        Command::Ingest(args) => {
            let raw: Vec<RawReportRecord> = read_jsonl(&args.raw).map_err(from_io)?;
            let annotations: Vec<AnnotationRecord> =
                read_jsonl(&args.annotations).map_err(from_io)?;
            let reports = ingest_reports(&raw, &annotations, &SectionConfig::default(), &vocab)
                .map_err(from_pipeline)?;
            ensure_out(&out)?;
            write_jsonl(&out.join("corpus.jsonl"), &reports).map_err(from_io)?;
            println!("ingest: {} reports -> {}", reports.len(), out.display());
        }
        Command::Pair(args) => {
            let settings = resolve_settings(&config.pipeline, &args.settings);
            let scans = read_metadata_csv(&args.metadata).map_err(from_io)?;
            let (store, _) = load_token_store(&args.tokens, &vocab).map_err(from_io)?;
            let PairingOutcome {
                mut pairs,
                excluded_no_frontal,
            } = build_longitudinal_pairs(&scans, &store, settings.global_seed)
                .map_err(|e| CliError::Data(e.into()))?;
            pairs.sort_by(|a, b| a.report_id.cmp(&b.report_id));
            ensure_out(&out)?;
            write_jsonl(&out.join("pairs.jsonl"), &pairs).map_err(from_io)?;
            println!(
                "pair: {} pairs ({} initial, {} studies excluded without frontal scan) -> {}",
                pairs.len(),
                pairs.iter().filter(|p| p.is_initial()).count(),
                excluded_no_frontal,
                out.display()
            );
        }
        Command::Partition(args) => {
            let reports: Vec<AnnotatedReport> = read_jsonl(&args.corpus).map_err(from_io)?;
            let partitions = partition_reports(&reports);
            let subsets: usize = partitions.iter().map(|p| p.subsets.len()).sum();
            ensure_out(&out)?;
            write_jsonl(&out.join("partitions.jsonl"), &partitions).map_err(from_io)?;
            println!(
                "partition: {} reports, {} subsets -> {}",
                partitions.len(),
                subsets,
                out.display()
            );
        }
        Command::Sample(args) => {
            let mut settings = resolve_settings(&config.pipeline, &args.settings);
            if let Some(k) = args.samples_per_report.or(config.pipeline.samples_per_report) {
                settings.samples_per_report = k;
            }
            let reports: Vec<AnnotatedReport> = read_jsonl(&args.corpus).map_err(from_io)?;
            let partitions = read_jsonl(&args.partitions).map_err(from_io)?;
            let (samples, skipped) = sample_reports(&reports, &partitions, &vocab, &settings)
                .map_err(from_pipeline)?;
            ensure_out(&out)?;
            write_jsonl(&out.join("samples.jsonl"), &samples).map_err(from_io)?;
            println!(
                "sample: {} samples ({} reports without subsets) -> {}",
                samples.len(),
                skipped,
                out.display()
            );
        }
        Command::Fuse(args) => {
            let settings = resolve_settings(&config.pipeline, &args.settings);
            let samples: Vec<SampleRecord> = read_jsonl(&args.samples).map_err(from_io)?;
            let pairs: Vec<LongitudinalPair> = read_jsonl(&args.pairs).map_err(from_io)?;
            let (store, token_dim) = load_token_store(&args.tokens, &vocab).map_err(from_io)?;
            let params = match args.params {
                Some(path) => load_projection_params(&path).map_err(from_io)?,
                None => {
                    let token_dim = token_dim.ok_or_else(|| {
                        CliError::Data(anyhow::anyhow!("token file holds no records"))
                    })?;
                    ProjectionParams::random(
                        token_dim,
                        settings.joint_dim,
                        derive_seed(settings.global_seed, &["projection-params"]),
                    )
                }
            };
            let (joints, skipped) =
                fuse_samples(&samples, &pairs, &store, &vocab, &params).map_err(from_pipeline)?;
            ensure_out(&out)?;
            write_jsonl(&out.join("joint.jsonl"), &joints).map_err(from_io)?;
            println!(
                "fuse: {} fused ({} samples without a pair) -> {}",
                joints.len(),
                skipped,
                out.display()
            );
        }
        Command::Generate(args) => {
            let settings = resolve_settings(&config.pipeline, &args.settings);
            let joints: Vec<JointRecord> = read_jsonl(&args.joint).map_err(from_io)?;
            let samples: Vec<SampleRecord> = read_jsonl(&args.samples).map_err(from_io)?;
            let joint_width = joints
                .first()
                .map(|j| j.joint.width)
                .ok_or_else(|| CliError::Data(anyhow::anyhow!("no fused records to generate from")))?;
            let mut tables = EmbedTables::random(
                settings.embed_width,
                joint_width,
                16,
                settings.max_positions,
                derive_seed(settings.global_seed, &["embed-tables"]),
            );
            tables.include_masked = settings.include_masked;
            let (generated, references) =
                generate_texts(&joints, &samples, &vocab, &tables, &TemplateGenerator)
                    .map_err(from_pipeline)?;
            ensure_out(&out)?;
            write_jsonl(&out.join("generated.jsonl"), &generated).map_err(from_io)?;
            write_jsonl(&out.join("references.jsonl"), &references).map_err(from_io)?;
            println!("generate: {} texts -> {}", generated.len(), out.display());
        }
        Command::Evaluate(args) => {
            let settings = resolve_settings(&config.pipeline, &args.settings);
            let generated: Vec<TextRecord> = read_jsonl(&args.generated).map_err(from_io)?;
            let references: Vec<TextRecord> = read_jsonl(&args.references).map_err(from_io)?;
            let label_sets = match (&args.generated_labels, &args.reference_labels) {
                (Some(g), Some(r)) => Some((
                    read_jsonl::<FindingLabelSet>(g).map_err(from_io)?,
                    read_jsonl::<FindingLabelSet>(r).map_err(from_io)?,
                )),
                _ => None,
            };
            let eval = evaluate_records(
                &generated,
                &references,
                label_sets.as_ref().map(|(g, r)| (g.as_slice(), r.as_slice())),
                settings.ce_average,
            )
            .map_err(from_pipeline)?;
            ensure_out(&out)?;
            write_json(&out.join("eval.json"), &eval).map_err(from_io)?;
            println!(
                "evaluate: {} pairs, bleu-4 {:.4}, rouge-l {:.4}, meteor {:.4} -> {}",
                eval.pair_count,
                eval.bleu_4,
                eval.rouge_l,
                eval.meteor,
                out.display()
            );
        }
        Command::Run(args) => {
            let mut settings = resolve_settings(&config.pipeline, &args.settings);
            if let Some(k) = args.samples_per_report.or(config.pipeline.samples_per_report) {
                settings.samples_per_report = k;
            }
            let manifest = run_pipeline(&args.data, &out, &settings).map_err(from_pipeline)?;
            println!(
                "run: {} reports, {} samples, {} generated, bleu-4 {:.4} -> {}",
                manifest.counts.reports,
                manifest.counts.samples,
                manifest.counts.generated,
                manifest.eval.bleu_4,
                out.display()
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_parser_accepts_both_modes() {
        assert_eq!(parse_average("micro").unwrap(), Average::Micro);
        assert_eq!(parse_average("macro").unwrap(), Average::Macro);
        assert!(parse_average("median").is_err());
    }

    #[test]
    fn settings_precedence_is_flags_over_config_over_defaults() {
        let overlay = SettingsOverlay {
            global_seed: Some(7),
            joint_dim: Some(4),
            ..SettingsOverlay::default()
        };
        let flags = SettingsArgs {
            joint_dim: Some(12),
            ..SettingsArgs::default()
        };
        let settings = resolve_settings(&overlay, &flags);
        assert_eq!(settings.global_seed, 7);
        assert_eq!(settings.joint_dim, 12);
        assert_eq!(settings.max_positions, PipelineSettings::default().max_positions);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let result: Result<FileConfig, _> = toml::from_str("[pipeline]\nglobal_sed = 3\n");
        assert!(result.is_err());
    }
}
