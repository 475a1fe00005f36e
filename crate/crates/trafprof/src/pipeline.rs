//! Pipeline stages. Each stage has an in-memory form used by
//! [`run_pipeline`] and a file form used by the subcommands; both write the
//! same files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trafprof_core::dataset::{aggregate_subject, DatasetError, EnrichedSession, FeatureTable};
use trafprof_core::domain::{EnrichDiagnostics, EnrichError, TaxonomyError};
use trafprof_core::features::extract_session_features;
use trafprof_core::ml::ModelConfig;
use trafprof_core::session::{sessionize, Timeouts};
use trafprof_core::subject::{assign_subject, SubjectMapError};
use trafprof_core::{
    DomainProvider, FeatureSchema, LabelName, LabelSet, Packet, Session, SessionFeatures, SubjectMap, Taxonomy,
};

use crate::config::PipelineConfig;
use crate::enrich::{load_cache, FixtureProvider, SharedEnricher};
use crate::formats::{self, FormatError};
use crate::pcap::{read_capture, CaptureError, CaptureStats};
use crate::report::{importance_table, results_table, summarize, SummaryFile};
use crate::train::{train_label, LabelReport, ModelDump, TrainError};

/// File names inside the output directory.
pub mod files {
    pub const PACKETS: &str = "packets.jsonl";
    pub const SESSIONS: &str = "sessions.jsonl";
    pub const SESSION_LOG: &str = "sessions.tsv";
    pub const FEATURES: &str = "features.jsonl";
    pub const FEATURES_CSV: &str = "features.csv";
    pub const ENRICHED: &str = "enriched.jsonl";
    pub const CACHE: &str = "enrich_cache.jsonl";
    pub const DATASET: &str = "dataset.csv";
    pub const SCHEMA: &str = "schema.json";
    pub const REPORTS: &str = "reports";
    pub const MODELS: &str = "models";
    pub const SUMMARY: &str = "importance_summary.json";
    pub const TABLES: &str = "summary.txt";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Sessionize,
    Features,
    Enrich,
    Aggregate,
    Train,
    Report,
    Synth,
}

impl Stage {
    /// Process exit code for a failure in this stage.
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Config => 3,
            Stage::Ingest => 10,
            Stage::Sessionize => 11,
            Stage::Features => 12,
            Stage::Enrich => 13,
            Stage::Aggregate => 14,
            Stage::Train => 15,
            Stage::Report => 16,
            Stage::Synth => 17,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Sessionize => "sessionize",
            Stage::Features => "features",
            Stage::Enrich => "enrich",
            Stage::Aggregate => "aggregate",
            Stage::Train => "train",
            Stage::Report => "report",
            Stage::Synth => "synth",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl StageError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        StageError { stage, source: source.into() }
    }

    pub fn exit_code(&self) -> u8 {
        self.stage.exit_code()
    }

    /// The underlying error, when it has type `E`.
    pub fn downcast_ref<E: std::error::Error + 'static>(&self) -> Option<&E> {
        self.source.downcast_ref()
    }
}

/// Tags errors with a stage.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<Box<dyn std::error::Error + Send + Sync>>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, e))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("{path}: {source}")]
    SubjectMap { path: PathBuf, source: SubjectMapError },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}: no capture files found")]
    NoCaptures(PathBuf),
}

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("LabelsMissing: {0}")]
    LabelsMissing(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, thiserror::Error)]
pub enum EnrichStageError {
    #[error("host `{host}`: {source}")]
    Lookup { host: String, source: EnrichError },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
}

pub fn load_taxonomy(path: Option<&Path>) -> Result<Taxonomy, AggregateError> {
    match path {
        None => Ok(Taxonomy::builtin()),
        Some(p) => Ok(Taxonomy::parse(&formats::read_text(p)?)?),
    }
}

pub fn load_subject_map(path: &Path) -> Result<SubjectMap, IngestError> {
    let text = formats::read_text(path)?;
    SubjectMap::parse(&text).map_err(|source| IngestError::SubjectMap { path: path.into(), source })
}

/// Expands directories to their `*.pcap` / `*.cap` files, sorted.
pub fn expand_captures(paths: &[PathBuf]) -> Result<Vec<PathBuf>, IngestError> {
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            out.push(p.clone());
            continue;
        }
        let mut found: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| FormatError::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| matches!(f.extension().and_then(|e| e.to_str()), Some("pcap" | "cap")))
            .collect();
        if found.is_empty() {
            return Err(IngestError::NoCaptures(p.clone()));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureSummary {
    pub capture: String,
    pub stats: CaptureStats,
    pub unattributed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub captures: Vec<CaptureSummary>,
    pub totals: CaptureStats,
    pub unattributed: u64,
}

#[derive(Serialize, Deserialize)]
struct SubjectPacket {
    subject_id: String,
    packet: Packet,
}

/// Packets per subject, each list stable-sorted by timestamp.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ingested {
    pub summary: IngestSummary,
    pub packets: BTreeMap<String, Vec<Packet>>,
}

/// Reads the captures (in parallel, merged in the given order) and
/// attributes packets by client IP, falling back to the capture's file
/// stem. Unattributed packets are counted and dropped.
pub fn ingest(captures: &[PathBuf], map: &SubjectMap) -> Result<Ingested, IngestError> {
    let read: Vec<_> = captures.par_iter().map(|p| read_capture(p).map(|c| (p, c))).collect();
    let mut out = Ingested::default();
    for item in read {
        let (path, capture) = item?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let mut unattributed = 0;
        for packet in capture.packets {
            match assign_subject(&packet, map).or_else(|| map.subject_for_capture(stem)) {
                Some(subject) => out.packets.entry(subject.to_string()).or_default().push(packet),
                None => unattributed += 1,
            }
        }
        out.summary.totals.add(&capture.stats);
        out.summary.unattributed += unattributed;
        out.summary.captures.push(CaptureSummary { capture: path.display().to_string(), stats: capture.stats, unattributed });
    }
    for packets in out.packets.values_mut() {
        packets.sort_by_key(|p| p.timestamp);
    }
    Ok(out)
}

pub fn write_ingested(path: &Path, ingested: &Ingested) -> Result<(), FormatError> {
    let records: Vec<SubjectPacket> = ingested
        .packets
        .iter()
        .flat_map(|(s, ps)| ps.iter().map(|p| SubjectPacket { subject_id: s.clone(), packet: p.clone() }))
        .collect();
    formats::write_jsonl(path, "packets", &ingested.summary, &records)
}

pub fn read_ingested(path: &Path) -> Result<Ingested, FormatError> {
    let (summary, records): (IngestSummary, Vec<SubjectPacket>) = formats::read_jsonl(path, "packets")?;
    let mut packets: BTreeMap<String, Vec<Packet>> = BTreeMap::new();
    for r in records {
        packets.entry(r.subject_id).or_default().push(r.packet);
    }
    Ok(Ingested { summary, packets })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSessions {
    pub sessions: usize,
    pub orphans: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub subjects: BTreeMap<String, SubjectSessions>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sessionized {
    pub summary: SessionSummary,
    /// By subject, then in opening order.
    pub sessions: Vec<Session>,
}

/// One sessionizer per subject, run in parallel.
pub fn sessionize_all(packets: &BTreeMap<String, Vec<Packet>>, timeouts: Timeouts) -> Sessionized {
    let per_subject: Vec<_> = packets
        .par_iter()
        .map(|(subject, ps)| (subject.clone(), sessionize(subject, ps.iter().cloned(), timeouts)))
        .collect();
    let mut out = Sessionized::default();
    for (subject, result) in per_subject {
        out.summary
            .subjects
            .insert(subject, SubjectSessions { sessions: result.sessions.len(), orphans: result.orphans });
        out.sessions.extend(result.sessions);
    }
    out
}

pub fn write_sessions(dir_or_file: &Path, log: Option<&Path>, s: &Sessionized) -> Result<(), FormatError> {
    formats::write_jsonl(dir_or_file, "sessions", &s.summary, &s.sessions)?;
    if let Some(log) = log {
        formats::write_session_log(log, &s.sessions)?;
    }
    Ok(())
}

pub fn read_sessions(path: &Path) -> Result<Sessionized, FormatError> {
    let (summary, sessions) = formats::read_jsonl(path, "sessions")?;
    Ok(Sessionized { summary, sessions })
}

/// Per-session features in session order.
pub fn extract_all(sessions: &[Session]) -> Vec<SessionFeatures> {
    sessions.par_iter().map(extract_session_features).collect()
}

pub fn write_features(path: &Path, csv: Option<&Path>, features: &[SessionFeatures]) -> Result<(), FormatError> {
    formats::write_jsonl(path, "features", &(), features)?;
    if let Some(csv) = csv {
        formats::write_feature_csv(csv, features)?;
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<SessionFeatures>, FormatError> {
    Ok(formats::read_jsonl::<(), _>(path, "features")?.1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichSummary {
    pub diagnostics: EnrichDiagnostics,
    pub provider_calls: u64,
    pub sessions_with_domain: u64,
}

/// Enriches every session that carries a domain name.
pub fn enrich_all<P: DomainProvider + Sync>(
    features: Vec<SessionFeatures>,
    enricher: &SharedEnricher<P>,
) -> Result<(Vec<EnrichedSession>, EnrichSummary), EnrichStageError> {
    let enriched = features
        .into_par_iter()
        .map(|f| {
            let domain = match &f.domain_name {
                Some(host) => Some(
                    enricher.enrich(host).map_err(|source| EnrichStageError::Lookup { host: host.clone(), source })?,
                ),
                None => None,
            };
            Ok(EnrichedSession { features: f, domain })
        })
        .collect::<Vec<Result<_, EnrichStageError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let summary = EnrichSummary {
        diagnostics: enricher.diagnostics(),
        provider_calls: enricher.provider_calls(),
        sessions_with_domain: enriched.iter().filter(|e| e.domain.is_some()).count() as u64,
    };
    Ok((enriched, summary))
}

pub fn write_enriched(path: &Path, summary: &EnrichSummary, enriched: &[EnrichedSession]) -> Result<(), FormatError> {
    formats::write_jsonl(path, "enriched", summary, enriched)
}

pub fn read_enriched(path: &Path) -> Result<Vec<EnrichedSession>, FormatError> {
    Ok(formats::read_jsonl::<EnrichSummary, _>(path, "enriched")?.1)
}

/// Loads the labels file; a missing file is `LabelsMissing`.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, LabelSet>, AggregateError> {
    if path.as_os_str().is_empty() || !path.is_file() {
        return Err(AggregateError::LabelsMissing(format!("labels file {} not found", path.display())));
    }
    Ok(formats::read_labels_csv(path)?)
}

/// Aggregates each subject's sessions and assembles the imputed table.
/// Every subject with traffic must have labels.
pub fn aggregate_all(
    enriched: &[EnrichedSession],
    labels: &BTreeMap<String, LabelSet>,
    taxonomy: &Taxonomy,
) -> Result<(FeatureTable, FeatureSchema), AggregateError> {
    let mut by_subject: BTreeMap<&str, Vec<EnrichedSession>> = BTreeMap::new();
    for e in enriched {
        by_subject.entry(e.features.subject_id.as_str()).or_default().push(e.clone());
    }
    let unlabeled: Vec<&str> = by_subject.keys().copied().filter(|s| !labels.contains_key(*s)).collect();
    if !unlabeled.is_empty() {
        return Err(AggregateError::LabelsMissing(format!("no labels for subjects {}", unlabeled.join(", "))));
    }
    for s in labels.keys().filter(|s| !by_subject.contains_key(s.as_str())) {
        log::warn!("subject {s} has labels but no sessions; left out of the dataset");
    }
    let records = by_subject
        .into_par_iter()
        .map(|(subject, sessions)| aggregate_subject(&sessions, subject, labels[subject], taxonomy))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    if records.len() < 2 {
        return Err(DatasetError::TooFewSubjects(records.len()).into());
    }
    let schema = FeatureSchema::new(taxonomy);
    let table = FeatureTable::assemble(records, &schema)?;
    Ok((table, schema))
}

pub fn write_dataset(dir: &Path, table: &FeatureTable, schema: &FeatureSchema) -> Result<(), FormatError> {
    formats::write_dataset_csv(&dir.join(files::DATASET), table)?;
    formats::write_json(&dir.join(files::SCHEMA), schema)
}

/// Reads a dataset CSV and checks its columns against the schema file.
pub fn read_dataset(dataset: &Path, schema: &Path) -> Result<(FeatureTable, FeatureSchema), FormatError> {
    let table = formats::read_dataset_csv(dataset)?;
    let schema: FeatureSchema = formats::read_json(schema)?;
    if !table.feature_names.iter().map(String::as_str).eq(schema.names()) {
        return Err(FormatError::Malformed {
            path: dataset.into(),
            message: "feature columns do not match the schema file".into(),
        });
    }
    Ok((table, schema))
}

pub type Trained = Vec<(LabelReport, Option<ModelDump>)>;

pub fn train_all(
    table: &FeatureTable,
    schema: &FeatureSchema,
    labels: &[LabelName],
    grid: &[ModelConfig],
) -> Result<Trained, TrainError> {
    labels
        .iter()
        .map(|&label| {
            let out = train_label(table, schema, label, grid)?;
            match &out.0.skipped {
                Some(reason) => log::warn!("{label}: skipped ({reason})"),
                None => log::info!("{label}: evaluated {} configurations", grid.len()),
            }
            Ok(out)
        })
        .collect()
}

pub fn write_trained(dir: &Path, trained: &Trained) -> Result<(), FormatError> {
    for (report, dump) in trained {
        formats::write_json(&dir.join(files::REPORTS).join(format!("{}.json", report.label)), report)?;
        if let Some(dump) = dump {
            formats::write_json(&dir.join(files::MODELS).join(format!("{}.json", dump.label)), dump)?;
        }
    }
    Ok(())
}

/// Reports in a directory, in label order.
pub fn read_reports(dir: &Path) -> Result<Vec<LabelReport>, FormatError> {
    let mut reports = Vec::new();
    for label in LabelName::ALL {
        let path = dir.join(format!("{}.json", label.column()));
        if path.is_file() {
            let report: LabelReport = formats::read_json(&path)?;
            if report.schema_version != formats::SCHEMA_VERSION {
                return Err(FormatError::Schema {
                    path,
                    expected: "report".into(),
                    version: formats::SCHEMA_VERSION,
                    found: report.schema_version.to_string(),
                });
            }
            reports.push(report);
        }
    }
    if reports.is_empty() {
        return Err(FormatError::Malformed { path: dir.into(), message: "no label reports found".into() });
    }
    Ok(reports)
}

/// Writes the summary JSON and the text tables.
pub fn write_report(dir: &Path, reports: &[LabelReport], schema: &FeatureSchema) -> Result<SummaryFile, FormatError> {
    let summary = summarize(reports, schema);
    formats::write_json(&dir.join(files::SUMMARY), &summary)?;
    let text = format!("{}\n{}", results_table(reports), importance_table(&summary));
    fs::write(dir.join(files::TABLES), text).map_err(|e| FormatError::io(&dir.join(files::TABLES), e))?;
    Ok(summary)
}

/// What a full run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub ingest: IngestSummary,
    pub enrich: EnrichSummary,
    pub table: FeatureTable,
    pub schema: FeatureSchema,
    pub reports: Vec<LabelReport>,
    pub summary: SummaryFile,
}

/// Runs every stage on a pool of `config.threads` workers.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome, StageError> {
    config.validate().at(Stage::Config)?;
    let grid = config.grid().at(Stage::Config)?;
    let label_names = config.label_names().at(Stage::Config)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.threads).build().at(Stage::Config)?;
    pool.install(|| run_stages(config, &grid, &label_names))
}

fn run_stages(config: &PipelineConfig, grid: &[ModelConfig], label_names: &[LabelName]) -> Result<RunOutcome, StageError> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| FormatError::io(out, e)).at(Stage::Config)?;
    let keep = config.keep_intermediates;

    let map = load_subject_map(&config.subject_map).at(Stage::Ingest)?;
    let captures = expand_captures(&config.captures).at(Stage::Ingest)?;
    let ingested = ingest(&captures, &map).at(Stage::Ingest)?;
    log::info!("ingest: {} packets from {} captures", ingested.summary.totals.emitted, captures.len());
    if keep {
        write_ingested(&out.join(files::PACKETS), &ingested).at(Stage::Ingest)?;
    }

    let sessionized = sessionize_all(&ingested.packets, config.timeouts());
    let ingest_summary = ingested.summary.clone();
    drop(ingested);
    log::info!("sessionize: {} sessions", sessionized.sessions.len());
    if keep {
        write_sessions(&out.join(files::SESSIONS), Some(&out.join(files::SESSION_LOG)), &sessionized)
            .at(Stage::Sessionize)?;
    }

    let features = extract_all(&sessionized.sessions);
    drop(sessionized);
    if keep {
        write_features(&out.join(files::FEATURES), Some(&out.join(files::FEATURES_CSV)), &features).at(Stage::Features)?;
    }

    let taxonomy = load_taxonomy(config.taxonomy.as_deref()).at(Stage::Enrich)?;
    let provider = FixtureProvider::load(&config.fixture_store).at(Stage::Enrich)?;
    let cache_path = config.cache_path();
    let warm = load_cache(&cache_path).at(Stage::Enrich)?;
    let enricher = SharedEnricher::new(provider, taxonomy.clone(), config.strict).with_warm_cache(warm);
    let (enriched, enrich_summary) = enrich_all(features, &enricher).at(Stage::Enrich)?;
    enricher.persist(&cache_path).at(Stage::Enrich)?;
    log::info!("enrich: {:?}", enrich_summary);
    if keep {
        write_enriched(&out.join(files::ENRICHED), &enrich_summary, &enriched).at(Stage::Enrich)?;
    }

    let labels = load_labels(&config.labels).at(Stage::Aggregate)?;
    let (table, schema) = aggregate_all(&enriched, &labels, &taxonomy).at(Stage::Aggregate)?;
    drop(enriched);
    write_dataset(out, &table, &schema).at(Stage::Aggregate)?;

    let trained = train_all(&table, &schema, label_names, grid).at(Stage::Train)?;
    write_trained(out, &trained).at(Stage::Train)?;
    let reports: Vec<LabelReport> = trained.into_iter().map(|(r, _)| r).collect();

    let summary = write_report(out, &reports, &schema).at(Stage::Report)?;
    Ok(RunOutcome { ingest: ingest_summary, enrich: enrich_summary, table, schema, reports, summary })
}
