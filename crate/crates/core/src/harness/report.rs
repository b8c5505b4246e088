use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::SCHEMA_VERSION;
use super::run::ReportBundle;
use super::world::Timings;
use crate::error::{PumaError, Result};
use crate::metrics::CSV_HEADER;

pub const MANIFEST: &str = "manifest.json";
pub const RESULTS: &str = "results.json";
pub const TIMINGS: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Content hashes of every deterministic artifact in an output directory.
/// Files listed under `volatile` (wall-clock timings) carry no hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub files: Vec<ManifestEntry>,
    pub volatile: Vec<String>,
}

impl Manifest {
    pub fn hash_of(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == path).map(|f| f.sha256.as_str())
    }
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| PumaError::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| PumaError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| PumaError::io(&path, e))?;
    Ok(path)
}

pub fn write_json<S: Serialize>(dir: &Path, name: &str, value: &S) -> Result<PathBuf> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(dir, name, &s)
}

/// Hashes `files` (relative to `dir`, sorted) and writes `manifest.json`.
pub fn write_manifest(dir: &Path, files: &[String], volatile: &[String]) -> Result<Manifest> {
    let mut names = files.to_vec();
    names.sort();
    names.dedup();
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let (bytes, sha256) = sha256_file(&dir.join(&name))?;
        entries.push(ManifestEntry { path: name, bytes, sha256 });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        files: entries,
        volatile: volatile.to_vec(),
    };
    write_json(dir, MANIFEST, &manifest)?;
    Ok(manifest)
}

/// Manifest over every regular file directly inside `dir`, except the
/// manifest itself and the volatile timings.
pub fn manifest_dir(dir: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| PumaError::io(dir, e))? {
        let entry = entry.map_err(|e| PumaError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_file = entry.file_type().map_err(|e| PumaError::io(entry.path(), e))?.is_file();
        if is_file && name != MANIFEST && name != TIMINGS {
            files.push(name);
        }
    }
    let volatile = if dir.join(TIMINGS).exists() {
        vec![TIMINGS.to_string()]
    } else {
        Vec::new()
    };
    write_manifest(dir, &files, &volatile)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn arms_csv(b: &ReportBundle) -> String {
    let mut s = format!("arm,scorer,records_processed,{CSV_HEADER}\n");
    for a in &b.arms {
        let _ = writeln!(s, "{},{},{},{}", a.arm, a.scorer, a.records_processed, a.metrics.csv_row());
    }
    s
}

/// One row per hop: hop index to headline metric, next to full retraining.
pub fn chain_csv(b: &ReportBundle) -> String {
    let mut s = String::from("hop,source,target,metric,migrated,full_retrain,migrated_over_full,adapter_records\n");
    for h in &b.chain {
        let metric = match h.migrated.task {
            crate::data::Task::Rating => "rmse",
            crate::data::Task::Click => "auc",
        };
        let (m, f) = (h.migrated.headline(), h.full_retrain.headline());
        let _ = writeln!(
            s,
            "{},{},{},{metric},{m:.6},{f:.6},{:.6},{}",
            h.hop,
            h.source,
            h.target,
            m / f,
            h.adapter_records
        );
    }
    s
}

pub fn heatmap_csv(b: &ReportBundle) -> String {
    let Some(h) = &b.heatmap else { return String::new() };
    let mut s = format!("source,{}\n", h.families.join(","));
    for (i, f) in h.families.iter().enumerate() {
        let cells: Vec<String> = h.gain[i].iter().map(|g| format!("{g:.6}")).collect();
        let _ = writeln!(s, "{f},{}", cells.join(","));
    }
    s
}

pub fn sweep_csv(b: &ReportBundle) -> String {
    let mut s = format!("strategy,budget,n_seeds,{CSV_HEADER},rmse_sd,mae_sd,auc_sd,uauc_sd\n");
    for r in &b.sweep {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.strategy,
            r.budget,
            r.seeds.len(),
            r.mean_report().csv_row(),
            opt(r.sd.rmse),
            opt(r.sd.mae),
            opt(r.sd.auc),
            opt(r.sd.uauc)
        );
    }
    s
}

pub fn summary(b: &ReportBundle) -> String {
    let mut s = String::new();
    let d = &b.dataset;
    let _ = writeln!(s, "command: {}", b.command);
    let _ = writeln!(s, "seed: {}", b.config.seed);
    let _ = writeln!(
        s,
        "dataset: {} task, {} users, {} items, {} records",
        d.task.name(),
        d.n_users,
        d.n_items,
        d.n_records
    );
    if !b.arms.is_empty() {
        let _ = writeln!(s, "\narms:");
        for a in &b.arms {
            let _ = writeln!(
                s,
                "  {:<22} {:<14} headline {:.4}  records {}",
                a.arm,
                a.scorer,
                a.metrics.headline(),
                a.records_processed
            );
        }
    }
    if let Some(sel) = &b.selection {
        let _ = writeln!(s, "\nselection: {} budget {} k {}", sel.strategy, sel.budget, sel.k);
    }
    if let Some(l) = &b.ledger {
        let _ = writeln!(
            s,
            "\ncost: adapter {} vs full retraining {} record passes (ratio {})",
            l.adapter_records,
            l.full_retrain_records,
            opt(l.cost_ratio)
        );
    }
    if !b.frozen.is_empty() {
        let ok = b.frozen.iter().all(|f| f.intact());
        let _ = writeln!(s, "frozen inputs unchanged across {} adapter runs: {ok}", b.frozen.len());
    }
    if !b.chain.is_empty() {
        let _ = writeln!(s, "\nchain:");
        for h in &b.chain {
            let _ = writeln!(
                s,
                "  hop {} {} -> {}: migrated {:.4} vs retrained {:.4}",
                h.hop,
                h.source,
                h.target,
                h.migrated.headline(),
                h.full_retrain.headline()
            );
        }
    }
    if let Some(h) = &b.heatmap {
        let _ = writeln!(s, "\nheatmap mean off-diagonal gain: {:.4}", h.mean_off_diagonal());
    }
    if !b.sweep.is_empty() {
        let _ = writeln!(s, "\nsweep:");
        for r in &b.sweep {
            let _ = writeln!(
                s,
                "  {:<18} budget {:<4} mean {:.4} sd {:.4}",
                r.strategy,
                r.budget,
                r.mean_report().headline(),
                r.sd.rmse.or(r.sd.auc).unwrap_or(f64::NAN)
            );
        }
    }
    s
}

/// Writes results, tables, summary, timings and the manifest into `dir`.
/// Tables whose section is empty are skipped; the manifest covers every file
/// in `dir`. Emitting twice yields the same deterministic files.
pub fn emit_reports(bundle: &ReportBundle, timings: &Timings, dir: &Path) -> Result<Manifest> {
    write_text(dir, RESULTS, &bundle.to_json())?;
    write_text(dir, "arms.csv", &arms_csv(bundle))?;
    write_text(dir, "summary.txt", &summary(bundle))?;
    if !bundle.chain.is_empty() {
        write_text(dir, "chain.csv", &chain_csv(bundle))?;
    }
    if bundle.heatmap.is_some() {
        write_text(dir, "heatmap.csv", &heatmap_csv(bundle))?;
    }
    if !bundle.sweep.is_empty() {
        write_text(dir, "sweep.csv", &sweep_csv(bundle))?;
    }
    write_json(dir, TIMINGS, timings)?;
    manifest_dir(dir)
}
