#![allow(clippy::field_reassign_with_default)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use puma_core::harness::{ExperimentConfig, Manifest, MANIFEST};
use puma_core::persist::{load_adapter, load_corpus, sidecar_path, AdapterMeta};
use puma_core::selection::SelectionResult;

fn puma(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puma"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn puma")
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 3;
    cfg.data.n_users = 40;
    cfg.data.n_items = 90;
    cfg.data.mean_records_per_user = 15.0;
    cfg.prompt.epochs = 2;
    cfg.adapter.epochs = 2;
    let p = dir.join("cfg.json");
    fs::write(&p, cfg.to_json()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"schema_version": 7}"#).unwrap();
    fs::write(d.join("typo.json"), r#"{"seeed": 1}"#).unwrap();
    for args in [
        vec!["report", "--config", "bad.json"],
        vec!["report", "--config", "typo.json"],
        vec!["report", "--config", "missing.json"],
        vec!["report", "--arm", "bogus"],
        vec!["report", "--seed", "minus-one"],
        vec!["no-such-command"],
    ] {
        let out = puma(d, &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn missing_inputs_are_stage_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for cmd in ["train-adapter", "migrate", "evaluate"] {
        let out = puma(dir.path(), &[cmd, "--config", &cfg, "--out", "empty"]);
        assert_eq!(out.status.code(), Some(3), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = puma(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "gen-data",
        "train-prompts",
        "select-users",
        "train-adapter",
        "migrate",
        "evaluate",
        "chain",
        "aggregate",
        "sweep",
        "heatmap",
        "report",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn staged_pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let stages: [&[&str]; 8] = [
        &["gen-data"],
        &["train-prompts"],
        &["train-prompts", "--arm", "full_retrain"],
        &["train-prompts", "--arm", "random_init"],
        &["select-users"],
        &["train-adapter"],
        &["migrate"],
        &["evaluate"],
    ];
    for args in stages {
        let mut full = args.to_vec();
        full.extend(["--config", cfg.as_str(), "--out", "run"]);
        let out = puma(d, &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = d.join("run");
    for f in [
        "dataset.pumd",
        "scorer-alpha.pums",
        "scorer-bravo.pums",
        "prompts-alpha.pump",
        "prompts-bravo.pump",
        "prompts-random_init.pump",
        "prompts-migrated.pump",
        "adapter.puma",
        "selection.json",
        "metrics.csv",
        "metrics.json",
        MANIFEST,
    ] {
        assert!(run.join(f).exists(), "{f}");
    }

    let sel: SelectionResult = serde_json::from_str(&fs::read_to_string(run.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel.users.len(), 8);
    let meta: AdapterMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(&run.join("adapter.puma"))).unwrap()).unwrap();
    assert!(meta.target_id.starts_with("bravo#"), "{}", meta.target_id);
    let (_, head) = load_adapter::<f64>(&run.join("adapter.puma")).unwrap();
    assert!(head.is_some());
    let migrated: puma_core::Corpus = load_corpus(&run.join("prompts-migrated.pump")).unwrap();
    assert_eq!(migrated.n_users(), 40);

    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let arms: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["full_retrain", "source_perf", "random_init", "puma"]);

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(run.join(MANIFEST)).unwrap()).unwrap();
    assert!(manifest.hash_of("adapter.puma").is_some());
    assert!(manifest.hash_of("timings.json").is_none());
}

#[test]
fn report_writes_tables_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = puma(
        dir.path(),
        &["report", "--config", &cfg, "--out", "rep", "--seed", "9", "--arm", "full_retrain,puma"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed: 9"));
    let csv = fs::read_to_string(dir.path().join("rep/arms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let results: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rep/results.json")).unwrap()).unwrap();
    assert_eq!(results["config"]["seed"], 9);
}
