#![allow(clippy::field_reassign_with_default)]

use std::fs;

use puma_core::data::Task;
use puma_core::harness::*;
use puma_core::selection::Strategy;

fn tiny(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.data.n_users = 40;
    cfg.data.n_items = 90;
    cfg.data.mean_records_per_user = 15.0;
    cfg.prompt.epochs = 2;
    cfg.adapter.epochs = 2;
    cfg.repeats = 2;
    cfg
}

#[test]
fn config_json_round_trip_and_rejections() {
    let cfg = tiny(3);
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());

    let bad = [
        r#"{"schema_version": 2}"#,
        r#"{"no_such_field": 1}"#,
        r#"{"budget_fraction": 1.5}"#,
        r#"{"target": "zulu"}"#,
        "not json",
    ];
    for text in bad {
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(err.is_config(), "{text}: {err}");
    }
}

#[test]
fn direct_experiment_reports_every_arm() {
    let mut world = World::new(tiny(1)).unwrap();
    let b = run_experiment(&mut world, &[]).unwrap();
    let names: Vec<&str> = b.arms.iter().map(|a| a.arm.as_str()).collect();
    assert_eq!(names, ARMS);
    let ledger = b.ledger.clone().unwrap();
    let full = b.arm("full_retrain").unwrap().records_processed;
    assert_eq!(ledger.full_retrain_records, full);
    assert_eq!(ledger.adapter_records, b.arm("puma").unwrap().records_processed);
    assert!(ledger.cost_ratio.unwrap() < 1.0);
    assert_eq!(b.selection.as_ref().unwrap().users.len(), world.cfg.budget());
    assert!(b.frozen.iter().all(FrozenCheck::intact));

    let only = run_experiment(&mut world, &["puma".to_string()]).unwrap();
    assert_eq!(only.arms.len(), 1);
    assert_eq!(only.arms[0], *b.arm("puma").unwrap());
    assert!(run_experiment(&mut world, &["nope".to_string()]).unwrap_err().is_config());
}

#[test]
fn emitted_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let mut world = World::new(tiny(2)).unwrap();
        let b = run_experiment(&mut world, &[]).unwrap();
        let out = dir.path().join(run);
        let m = emit_reports(&b, &world.timings, &out).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["arms.csv", RESULTS, "summary.txt"]);
        assert_eq!(m.volatile, [TIMINGS]);
        let (bytes, hash) = sha256_file(&out.join(RESULTS)).unwrap();
        assert_eq!(m.hash_of(RESULTS), Some(hash.as_str()));
        assert_eq!(m.files[1].bytes, bytes);
        let csv = fs::read_to_string(out.join("arms.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + ARMS.len());
        manifests.push(m);
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn chain_and_aggregate_topologies() {
    let mut cfg = tiny(4);
    cfg.topology = Topology::Chain {
        families: vec!["echo".into(), "charlie".into(), "alpha".into()],
    };
    let mut world = World::new(cfg).unwrap();
    let b = run_experiment(&mut world, &[]).unwrap();
    assert_eq!(b.chain.len(), 2);
    assert_eq!((b.chain[0].source.as_str(), b.chain[1].target.as_str()), ("echo", "alpha"));
    assert_eq!(
        b.ledger.as_ref().unwrap().adapter_records,
        b.chain.iter().map(|h| h.adapter_records).sum::<u64>()
    );
    assert_eq!(chain_csv(&b).lines().count(), 3);

    world.cfg.topology = Topology::Aggregate {
        sources: vec!["echo".into(), "charlie".into()],
    };
    let b = run_experiment(&mut world, &[]).unwrap();
    for arm in ["puma/echo", "puma/charlie", "puma_aggregate", "full_retrain"] {
        assert!(b.arm(arm).is_some(), "{arm}");
    }
    assert_eq!(b.frozen.len(), 3);
}

#[test]
fn sweep_and_heatmap_tables() {
    let cfg = tiny(5);
    let (b, _) = run_selection_sweep(&cfg, &[Strategy::Random, Strategy::KmeansVarStrat], &[5, 6]).unwrap();
    let names: Vec<&str> = b.sweep.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(names, ["random", "kmeans_var_strat", RANDOM_3X]);
    assert_eq!(b.sweep[2].budget, 3 * cfg.budget());
    assert!(b.sweep.iter().all(|r| r.per_seed.len() == 2 && r.sd.rmse.is_some()));
    assert_eq!(sweep_csv(&b).lines().count(), 4);

    let mut world = World::new(cfg).unwrap();
    let fams = vec!["echo".to_string(), "charlie".to_string()];
    let h = run_heatmap(&mut world, &fams).unwrap();
    assert_eq!(h.gain.len(), 2);
    assert!((h.gain[0][0] - 1.0).abs() < 1e-12 && (h.gain[1][1] - 1.0).abs() < 1e-12);
    assert!(h.gain[0][1] > 0.0 && h.gain[1][0] > 0.0);
}

#[test]
fn click_task_runs_end_to_end() {
    let mut cfg = tiny(6);
    cfg.data.task = Task::Click;
    let mut world = World::new(cfg).unwrap();
    let b = run_experiment(&mut world, &[]).unwrap();
    for a in &b.arms {
        assert!(a.metrics.auc.is_some() && a.metrics.rmse.is_none(), "{}", a.arm);
    }
}

#[test]
fn default_adapter_is_lightweight() {
    let cfg = ExperimentConfig::default();
    let d_item = cfg.data.d_item;
    let src = puma_core::Scorer::build(cfg.family(&cfg.source).unwrap(), d_item, 0).unwrap();
    let tgt = puma_core::Scorer::build(cfg.family(&cfg.target).unwrap(), d_item, 0).unwrap();
    let a = puma_core::adapter::build_adapter::<f64>(
        &[(src.prompt_len(), src.d_model())],
        (tgt.prompt_len(), tgt.d_model()),
        cfg.adapter.blocks,
        cfg.adapter.hidden,
        cfg.adapter.activation,
        0,
    )
    .unwrap();
    let frozen = src.param_count() + tgt.param_count();
    eprintln!(
        "adapter {} frozen {} ({} + {})",
        a.param_count(),
        frozen,
        src.param_count(),
        tgt.param_count()
    );
    assert!((a.param_count() as f64) < 0.05 * frozen as f64);
}
