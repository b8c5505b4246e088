//! Experiment orchestration: configuration, the shared per-seed world,
//! the comparison runners and report emission.

mod config;
mod report;
mod run;
mod world;

pub use config::{CostLedger, EvalSplit, ExperimentConfig, Topology, SCHEMA_VERSION};
pub use report::{
    arms_csv, chain_csv, emit_reports, heatmap_csv, manifest_dir, sha256_file, summary, sweep_csv, write_json, write_manifest, write_text, Manifest,
    ManifestEntry, MANIFEST, RESULTS, TIMINGS,
};
pub use run::{
    cross_gain, migrate_users, migrate_with, run_experiment, run_heatmap, run_selection_sweep, select_for, sweep_world, ArmRow, FrozenCheck,
    HeatmapReport, HopRow, Migration, ReportBundle, SelectionSummary, Stat, SweepRow, ARMS, RANDOM_3X,
};
pub use world::{Timings, Trained, World};
