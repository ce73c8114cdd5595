use std::fs;
use std::path::Path;

use intercom_core::pipeline::{run_pipeline, validate_bundle, Config};
use intercom_core::sentiment::SentimentLabel;
use intercom_core::synth::{generate_corpus, sentiment_labels, Manifest, SynthSpec};
use intercom_core::Error;

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn synth_setup(dir: &Path, spec: &SynthSpec) -> (Config, Manifest) {
    let (events, manifest_path) = generate_corpus(spec, dir.join("synth")).unwrap();
    let manifest: Manifest = serde_json::from_str(&read(&manifest_path.parent().unwrap(), "manifest.json")).unwrap();
    let labels = dir.join("labels.jsonl");
    let lines: Vec<String> = sentiment_labels(&manifest)
        .into_iter()
        .map(|(crosslink, label)| serde_json::to_string(&SentimentLabel { crosslink, label }).unwrap())
        .collect();
    fs::write(&labels, lines.join("\n") + "\n").unwrap();
    let config = Config {
        corpus: Some(events),
        labels: Some(labels),
        output: dir.join("out"),
        trees: 50,
        ..Config::default()
    };
    (config, manifest)
}

#[test]
fn empty_corpus_gives_a_valid_empty_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    fs::write(&corpus, "").unwrap();
    let config = Config {
        corpus: Some(corpus),
        output: dir.path().join("out"),
        ..Config::default()
    };
    let run = run_pipeline(&config).unwrap();
    assert!(run.manifest.complete);
    validate_bundle(&config.output).unwrap();
    assert_eq!(read(&config.output, "alerts.jsonl"), "");
    let baseline: serde_json::Value = serde_json::from_str(&read(&config.output, "baseline.json")).unwrap();
    assert_eq!(baseline["default_used"], true);
}

#[test]
fn synthetic_end_to_end_matches_the_planted_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_communities: 8,
        users_per_community: 30,
        n_crosslinks: 64,
        days_after: 35,
        seed: 3,
        ..SynthSpec::default()
    };
    let (config, manifest) = synth_setup(dir.path(), &spec);
    let run = run_pipeline(&config).unwrap();
    validate_bundle(&config.output).unwrap();
    assert!(!run.all_cached());

    let summary: serde_json::Value = serde_json::from_str(&read(&config.output, "summary.json")).unwrap();
    let planted = manifest.mobilizations().count();
    assert!(planted > 0);
    assert_eq!(summary["crosslinks"], manifest.links.len());
    assert_eq!(summary["mobilizations"], planted);
    let negative = manifest
        .mobilizations()
        .filter(|l| l.sentiment == intercom_core::Sentiment::Negative)
        .count();
    assert_eq!(summary["negative_mobilizations"], negative);
    assert_eq!(read(&config.output, "alerts.jsonl").lines().count(), negative);

    // unchanged re-run: every stage after ingest comes from the cache, outputs identical
    let first: Vec<(String, String)> = run
        .manifest
        .files
        .iter()
        .map(|f| (f.name.clone(), read(&config.output, &f.name)))
        .collect();
    let manifest_text = read(&config.output, "manifest.json");
    let again = run_pipeline(&config).unwrap();
    assert!(again.stages.iter().filter(|s| s.name != "ingest").all(|s| s.cache_hit));
    assert_eq!(read(&config.output, "manifest.json"), manifest_text);
    for (name, text) in first {
        assert_eq!(read(&config.output, &name), text, "{name}");
    }
}

#[test]
fn failing_stage_is_named_and_earlier_outputs_survive() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_communities: 4,
        users_per_community: 30,
        n_crosslinks: 8,
        days_after: 3,
        ..SynthSpec::default()
    };
    let (mut config, _) = synth_setup(dir.path(), &spec);
    let model = dir.path().join("broken.forest");
    fs::write(&model, b"not a model").unwrap();
    config.sentiment_model = Some(model);
    let err = run_pipeline(&config).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(*stage, "sentiment");
            assert!(matches!(**source, Error::Format(_)));
        }
        e => panic!("unexpected error {e}"),
    }
    assert!(config.output.join("crosslinks.csv").exists());
    assert!(config.output.join("baseline.json").exists());
    let m = validate_bundle(&config.output).unwrap();
    assert!(!m.complete);
    assert_eq!(m.failed_stage.as_deref(), Some("sentiment"));
}

#[test]
fn missing_corpus_is_a_config_error() {
    assert!(matches!(run_pipeline(&Config::default()), Err(Error::Config(_))));
}
