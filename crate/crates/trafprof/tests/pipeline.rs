//! Whole-pipeline behaviour through the library and the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use trafprof::config::MlConfig;
use trafprof::pipeline::{files, AggregateError};
use trafprof::synth::{synth_generate, SynthOutput};
use trafprof::{loocv_parallel, run_pipeline, PipelineConfig, Stage, SynthSpec};
use trafprof_core::ml::{Algorithm, ModelConfig};
use trafprof_core::LabelName;

fn small_ml() -> MlConfig {
    MlConfig { n_trees: Some(15), k_values: Some(vec![10, 30]), ..MlConfig::default() }
}

fn synth(dir: &Path, n: usize, effects: &[&str]) -> SynthOutput {
    let spec = SynthSpec {
        n_subjects: n,
        sessions_per_subject: (15, 25),
        planted_effects: effects.iter().map(|e| e.parse().unwrap()).collect(),
        ..SynthSpec::default()
    };
    synth_generate(&spec, dir).unwrap()
}

fn config(s: &SynthOutput, out: &Path) -> PipelineConfig {
    PipelineConfig {
        captures: vec![s.captures_dir.clone()],
        subject_map: s.subject_map.clone(),
        labels: s.labels.clone(),
        fixture_store: s.fixture_store.clone(),
        output_dir: out.into(),
        ml: small_ml(),
        ..PipelineConfig::default()
    }
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trafprof"));
    c.env("RUST_LOG", "warn");
    c
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn end_to_end_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(&dir.path().join("data"), 14, &["gender:Female:domain:0.8"]);
    let out = dir.path().join("out");
    let outcome = run_pipeline(&config(&s, &out)).unwrap();

    assert_eq!(outcome.reports.len(), LabelName::COUNT);
    assert_eq!(outcome.table.subject_ids.len(), 14);
    assert_eq!(outcome.ingest.unattributed, 0);
    for f in [files::PACKETS, files::SESSIONS, files::SESSION_LOG, files::FEATURES_CSV, files::ENRICHED, files::CACHE] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for label in LabelName::ALL {
        assert!(out.join(files::REPORTS).join(format!("{}.json", label.column())).is_file());
    }
    let dataset = fs::read_to_string(out.join(files::DATASET)).unwrap();
    let header = dataset.lines().nth(1).unwrap();
    assert!(header.starts_with("subject_id,"));
    assert!(header.ends_with(&LabelName::ALL.map(|l| l.column()).join(",")));
    assert_eq!(dataset.lines().count(), 2 + 14);
    let tables = fs::read_to_string(out.join(files::TABLES)).unwrap();
    assert!(tables.contains("Gender") && tables.contains("Category"));
    let gender = &outcome.reports[LabelName::ALL.iter().position(|l| *l == LabelName::Gender).unwrap()];
    assert!(gender.best_f1.as_ref().unwrap().scores.accuracy >= 0.8);

    // A second run is served from the cache it left behind.
    let again = run_pipeline(&config(&s, &out)).unwrap();
    assert_eq!(again.enrich.provider_calls, 0);
    assert!(outcome.enrich.provider_calls > 0);
    assert_eq!(again.reports, outcome.reports);
}

#[test]
fn missing_labels_file_fails_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(&dir.path().join("data"), 4, &[]);
    let mut c = config(&s, &dir.path().join("out"));
    c.labels = dir.path().join("nope.csv");
    let err = run_pipeline(&c).unwrap_err();
    assert_eq!((err.stage, err.exit_code()), (Stage::Aggregate, 14));
    assert!(matches!(err.downcast_ref::<AggregateError>(), Some(AggregateError::LabelsMissing(_))));
    assert!(dir.path().join("out").join(files::ENRICHED).is_file());
    assert!(!dir.path().join("out").join(files::DATASET).exists());
}

#[test]
fn subject_without_labels_fails_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(&dir.path().join("data"), 4, &[]);
    let text = fs::read_to_string(&s.labels).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("s002,")).collect();
    fs::write(&s.labels, kept.join("\n")).unwrap();
    let err = run_pipeline(&config(&s, &dir.path().join("out"))).unwrap_err();
    match err.downcast_ref::<AggregateError>() {
        Some(AggregateError::LabelsMissing(m)) => assert!(m.contains("s002")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn no_effect_stays_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(&dir.path().join("data"), 40, &["gender:Female:domain:0.0"]);
    let mut c = config(&s, &dir.path().join("out"));
    c.ml.labels = Some(vec!["gender".into()]);
    let outcome = run_pipeline(&c).unwrap();
    let ds = outcome.table.target(LabelName::Gender).unwrap();
    let mut model = ModelConfig::new(Algorithm::RandomForest, 30);
    model.n_trees = 25;
    let acc = loocv_parallel(&ds, &model).unwrap().accuracy;
    // Balanced binary label: three binomial standard deviations above 0.5.
    let bound = 0.5 + 3.0 * (0.25f64 / 40.0).sqrt();
    assert!(acc <= bound, "accuracy {acc} above {bound}");
}

#[test]
fn staged_subcommands_match_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(&dir.path().join("data"), 8, &["smokes:Yes:statistical:0.7"]);
    let staged = dir.path().join("staged");
    let whole = dir.path().join("whole");
    let toml = dir.path().join("p.toml");
    fs::write(&toml, config(&s, &staged).to_toml()).unwrap();
    for stage in ["ingest", "sessionize", "features", "enrich", "aggregate", "train", "report"] {
        let st = bin().args([stage, "--config"]).arg(&toml).status().unwrap();
        assert!(st.success(), "{stage}: {st}");
    }
    let st = bin().args(["run", "--config"]).arg(&toml).arg("--output-dir").arg(&whole).status().unwrap();
    assert!(st.success());

    let a = files_under(&staged);
    let b = files_under(&whole);
    assert_eq!(a.iter().map(|p| p.strip_prefix(&staged).unwrap()).collect::<Vec<_>>(),
        b.iter().map(|p| p.strip_prefix(&whole).unwrap()).collect::<Vec<_>>());
    for (x, y) in a.iter().zip(&b) {
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn exit_codes_name_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let code = |cmd: &mut Command| cmd.output().unwrap().status.code().unwrap();

    assert_eq!(code(bin().args(["synth", "--n-subjects", "1", "--out"]).arg(dir.path().join("x"))), 17);
    assert_eq!(code(bin().args(["run", "--bogus-flag"])), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seeed = 3\n").unwrap();
    assert_eq!(code(bin().args(["run", "--config"]).arg(&bad)), 3);
    assert_eq!(code(bin().args(["ingest", "--captures", "/nonexistent.pcap", "--subject-map", "/dev/null"])), 3);

    let s = synth(&dir.path().join("data"), 3, &[]);
    fs::write(s.captures_dir.join("s002.pcap"), b"not a capture at all").unwrap();
    let out = dir.path().join("out");
    let mut ingest = bin();
    ingest.args(["ingest", "--captures"]).arg(&s.captures_dir).arg("--subject-map").arg(&s.subject_map);
    assert_eq!(code(ingest.arg("--output-dir").arg(&out)), 10);
    assert_eq!(code(bin().args(["sessionize", "--output-dir"]).arg(&out)), 11);
    assert_eq!(code(bin().args(["train", "--output-dir"]).arg(&out)), 15);
    assert_eq!(code(bin().args(["report", "--output-dir"]).arg(&out)), 16);
    assert_eq!(code(bin().args(["train", "--k-values", "0", "--output-dir"]).arg(&out)), 3);
}
