use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trafprof::config::{ConfigError, SplitRule};
use trafprof::enrich::{load_cache, FixtureProvider, SharedEnricher};
use trafprof::pipeline::{self, files, AtStage, Stage, StageError};
use trafprof::report::{importance_table, results_table};
use trafprof::synth::{synth_generate, PlantedEffect, SynthSpec};
use trafprof::PipelineConfig;

#[derive(Parser)]
#[command(name = "trafprof", version, about = "Smartphone traffic profiling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read captures and attribute packets to subjects.
    Ingest(ConfigArgs),
    /// Group packets into sessions.
    Sessionize(ConfigArgs),
    /// Extract per-session features.
    Features(ConfigArgs),
    /// Look up domain information for every session.
    Enrich(ConfigArgs),
    /// Build the per-subject dataset.
    Aggregate(ConfigArgs),
    /// Grid-search every label by leave-one-out evaluation.
    Train(ConfigArgs),
    /// Write the importance summary and the result tables.
    Report(ConfigArgs),
    /// Run every stage.
    Run(ConfigArgs),
    /// Generate a synthetic dataset with planted effects.
    Synth(SynthArgs),
}

/// Each flag overrides the config field of the same name.
#[derive(Args, Clone, Debug, Default)]
struct ConfigArgs {
    /// TOML config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    captures: Vec<PathBuf>,
    #[arg(long)]
    subject_map: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    fixture_store: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strict: bool,
    /// 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    keep_intermediates: Option<bool>,
    /// RF, ET or both, comma separated.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    k_values: Vec<usize>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_split: Option<usize>,
    /// `sqrt`, `all` or a number.
    #[arg(long)]
    features_per_split: Option<String>,
    /// Labels to evaluate, comma separated.
    #[arg(long = "label", value_delimiter = ',')]
    ml_labels: Vec<String>,
    #[arg(long)]
    tcp_idle_secs: Option<u64>,
    #[arg(long)]
    udp_idle_secs: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, ConfigError> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if !self.captures.is_empty() {
            c.captures = self.captures.clone();
        }
        let set = |dst: &mut PathBuf, src: &Option<PathBuf>| {
            if let Some(p) = src {
                *dst = p.clone();
            }
        };
        set(&mut c.subject_map, &self.subject_map);
        set(&mut c.labels, &self.labels);
        set(&mut c.fixture_store, &self.fixture_store);
        set(&mut c.output_dir, &self.output_dir);
        c.taxonomy = self.taxonomy.clone().or(c.taxonomy);
        c.cache = self.cache.clone().or(c.cache);
        c.seed = self.seed.unwrap_or(c.seed);
        c.strict |= self.strict;
        c.threads = self.threads.unwrap_or(c.threads);
        c.keep_intermediates = self.keep_intermediates.unwrap_or(c.keep_intermediates);
        if !self.algorithms.is_empty() {
            c.ml.algorithms = Some(self.algorithms.clone());
        }
        if !self.k_values.is_empty() {
            c.ml.k_values = Some(self.k_values.clone());
        }
        c.ml.n_trees = self.n_trees.or(c.ml.n_trees);
        c.ml.max_depth = self.max_depth.or(c.ml.max_depth);
        c.ml.min_samples_split = self.min_samples_split.or(c.ml.min_samples_split);
        if let Some(rule) = &self.features_per_split {
            c.ml.features_per_split =
                Some(rule.parse().map(SplitRule::Fixed).unwrap_or_else(|_| SplitRule::Named(rule.clone())));
        }
        if !self.ml_labels.is_empty() {
            c.ml.labels = Some(self.ml_labels.clone());
        }
        c.sessionizer.tcp_idle_secs = self.tcp_idle_secs.or(c.sessionizer.tcp_idle_secs);
        c.sessionizer.udp_idle_secs = self.udp_idle_secs.or(c.sessionizer.udp_idle_secs);
        // Surface grid and label errors before any stage runs.
        c.grid()?;
        c.label_names()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory to write the dataset into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    n_subjects: usize,
    #[arg(long, default_value_t = 20)]
    min_sessions: usize,
    #[arg(long, default_value_t = 40)]
    max_sessions: usize,
    /// `label:class:family:size`, e.g. `gender:Female:domain:0.5`.
    #[arg(long = "effect")]
    effects: Vec<String>,
    #[arg(long, default_value = "NEWS")]
    target_category: String,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), StageError> {
    let (stage, args) = match command {
        Command::Synth(args) => return synth(&args),
        Command::Run(args) => {
            let config = args.resolve().at(Stage::Config)?;
            let outcome = pipeline::run_pipeline(&config)?;
            print!("{}\n{}", results_table(&outcome.reports), importance_table(&outcome.summary));
            return Ok(());
        }
        Command::Ingest(a) => (Stage::Ingest, a),
        Command::Sessionize(a) => (Stage::Sessionize, a),
        Command::Features(a) => (Stage::Features, a),
        Command::Enrich(a) => (Stage::Enrich, a),
        Command::Aggregate(a) => (Stage::Aggregate, a),
        Command::Train(a) => (Stage::Train, a),
        Command::Report(a) => (Stage::Report, a),
    };
    let config = args.resolve().at(Stage::Config)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.threads).build().at(Stage::Config)?;
    pool.install(|| run_stage(stage, &config))
}

fn require(field: &'static str, path: &Path) -> Result<(), StageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath { field, path: path.into() }).at(Stage::Config)
    }
}

/// Runs one stage, reading the previous stage's file from the output
/// directory and writing its own there.
fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<(), StageError> {
    let out = &config.output_dir;
    let path = |name: &str| out.join(name);
    match stage {
        Stage::Ingest => {
            if config.captures.is_empty() {
                return Err(ConfigError::Invalid("no capture files given".into())).at(Stage::Config);
            }
            for c in &config.captures {
                require("captures", c)?;
            }
            require("subject_map", &config.subject_map)?;
            let map = pipeline::load_subject_map(&config.subject_map).at(stage)?;
            let captures = pipeline::expand_captures(&config.captures).at(stage)?;
            let ingested = pipeline::ingest(&captures, &map).at(stage)?;
            pipeline::write_ingested(&path(files::PACKETS), &ingested).at(stage)?;
            let t = &ingested.summary.totals;
            println!(
                "{} records, {} packets, {} skipped (non-IP), {} truncated, {} unattributed",
                t.records, t.emitted, t.skipped_non_ip, t.truncated, ingested.summary.unattributed
            );
        }
        Stage::Sessionize => {
            let ingested = pipeline::read_ingested(&path(files::PACKETS)).at(stage)?;
            let s = pipeline::sessionize_all(&ingested.packets, config.timeouts());
            pipeline::write_sessions(&path(files::SESSIONS), Some(&path(files::SESSION_LOG)), &s).at(stage)?;
            let orphans: u64 = s.summary.subjects.values().map(|v| v.orphans).sum();
            println!("{} sessions, {} orphan packets", s.sessions.len(), orphans);
        }
        Stage::Features => {
            let s = pipeline::read_sessions(&path(files::SESSIONS)).at(stage)?;
            let features = pipeline::extract_all(&s.sessions);
            pipeline::write_features(&path(files::FEATURES), Some(&path(files::FEATURES_CSV)), &features).at(stage)?;
            println!("{} session feature rows", features.len());
        }
        Stage::Enrich => {
            require("fixture_store", &config.fixture_store)?;
            let features = pipeline::read_features(&path(files::FEATURES)).at(stage)?;
            let taxonomy = pipeline::load_taxonomy(config.taxonomy.as_deref()).at(stage)?;
            let provider = FixtureProvider::load(&config.fixture_store).at(stage)?;
            let cache = config.cache_path();
            let enricher =
                SharedEnricher::new(provider, taxonomy, config.strict).with_warm_cache(load_cache(&cache).at(stage)?);
            let (enriched, summary) = pipeline::enrich_all(features, &enricher).at(stage)?;
            let persisted = enricher.persist(&cache).at(stage)?;
            pipeline::write_enriched(&path(files::ENRICHED), &summary, &enriched).at(stage)?;
            println!(
                "{} sessions with a domain, {} provider calls, {} new cache entries, {:?}",
                summary.sessions_with_domain, summary.provider_calls, persisted, summary.diagnostics
            );
        }
        Stage::Aggregate => {
            let enriched = pipeline::read_enriched(&path(files::ENRICHED)).at(stage)?;
            let taxonomy = pipeline::load_taxonomy(config.taxonomy.as_deref()).at(stage)?;
            let labels = pipeline::load_labels(&config.labels).at(stage)?;
            let (table, schema) = pipeline::aggregate_all(&enriched, &labels, &taxonomy).at(stage)?;
            pipeline::write_dataset(out, &table, &schema).at(stage)?;
            println!("{} subjects, {} features", table.subject_ids.len(), table.feature_names.len());
        }
        Stage::Train => {
            let (table, schema) = pipeline::read_dataset(&path(files::DATASET), &path(files::SCHEMA)).at(stage)?;
            let grid = config.grid().at(Stage::Config)?;
            let labels = config.label_names().at(Stage::Config)?;
            let trained = pipeline::train_all(&table, &schema, &labels, &grid).at(stage)?;
            pipeline::write_trained(out, &trained).at(stage)?;
            let reports: Vec<_> = trained.into_iter().map(|(r, _)| r).collect();
            print!("{}", results_table(&reports));
        }
        Stage::Report => {
            let schema = trafprof::formats::read_json(&path(files::SCHEMA)).at(stage)?;
            let reports = pipeline::read_reports(&path(files::REPORTS)).at(stage)?;
            let summary = pipeline::write_report(out, &reports, &schema).at(stage)?;
            print!("{}\n{}", results_table(&reports), importance_table(&summary));
        }
        Stage::Config | Stage::Synth => unreachable!("not a file stage"),
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), StageError> {
    let planted_effects = args
        .effects
        .iter()
        .map(|e| e.parse::<PlantedEffect>())
        .collect::<Result<Vec<_>, _>>()
        .at(Stage::Synth)?;
    let spec = SynthSpec {
        n_subjects: args.n_subjects,
        sessions_per_subject: (args.min_sessions, args.max_sessions),
        planted_effects,
        target_category: args.target_category.to_ascii_uppercase(),
        seed: args.seed.unwrap_or(SynthSpec::default().seed),
    };
    let out = synth_generate(&spec, &args.out).at(Stage::Synth)?;
    println!("{} subjects written; run with: trafprof run --config {}", out.subjects.len(), out.config.display());
    Ok(())
}
