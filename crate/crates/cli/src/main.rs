//! `puma`: staged and one-shot drivers for the prompt migration laboratory.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when a stage fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use puma_core::adapter::{migrate_corpus, train_adapter, MigrationJob};
use puma_core::harness::{
    emit_reports, manifest_dir, run_experiment, run_heatmap, run_selection_sweep, select_for, write_json, write_text, ExperimentConfig, ReportBundle,
    SelectionSummary, Timings, Topology, World, ARMS,
};
use puma_core::metrics::{MetricsReport, CSV_HEADER};
use puma_core::persist::{load_adapter, load_corpus, load_dataset, load_scorer, save_adapter, save_corpus, save_dataset, save_scorer, AdapterMeta};
use puma_core::prompt::{evaluate, TrainLog};
use puma_core::selection::SelectionResult;
use puma_core::{Corpus, PumaError, Result};

#[derive(Parser)]
#[command(name = "puma", version, about = "Soft-prompt migration between frozen scorers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config (schema_version 1); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Arm(s) to run or evaluate: full_retrain, source_perf, random_init, puma.
    #[arg(long, global = true, value_delimiter = ',')]
    arm: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its split.
    GenData,
    /// Fit prompts: source prompts (default), `--arm full_retrain` or `--arm random_init`.
    TrainPrompts,
    /// Pick the coreset of users from the source prompts.
    SelectUsers,
    /// Train the migration adapter on the selected users.
    TrainAdapter,
    /// Migrate every source prompt through the trained adapter.
    Migrate,
    /// Evaluate stored prompt corpora on the evaluation split.
    Evaluate,
    /// Chained migration (default alpha -> bravo -> charlie -> delta).
    Chain,
    /// Aggregated migration (default alpha + charlie -> target).
    Aggregate,
    /// Paired comparison of selection strategies over several seeds.
    Sweep,
    /// Migration gain for every ordered pair of families.
    Heatmap,
    /// Run the configured experiment end to end and emit all reports.
    Report,
}

const DATASET: &str = "dataset.pumd";
const SELECTION: &str = "selection.json";
const ADAPTER: &str = "adapter.puma";
const MIGRATED: &str = "prompts-migrated.pump";
const RANDOM_INIT: &str = "prompts-random_init.pump";

fn scorer_file(family: &str) -> String {
    format!("scorer-{family}.pums")
}

fn prompts_file(family: &str) -> String {
    format!("prompts-{family}.pump")
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    arms: Vec<String>,
    timings: Timings,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn need(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(missing(p, producer))
        }
    }

    /// A world over the stored dataset when present, else a freshly generated one.
    /// Stored scorers and source prompts replace their derived counterparts.
    fn world(&self) -> Result<World> {
        let ds_path = self.path(DATASET);
        let mut world = if ds_path.exists() {
            World::from_dataset(self.cfg.clone(), load_dataset(&ds_path)?)?
        } else {
            World::new(self.cfg.clone())?
        };
        for fam in [self.cfg.source.clone(), self.cfg.target.clone()] {
            let sp = self.path(&scorer_file(&fam));
            if sp.exists() {
                world.insert_scorer(&fam, load_scorer(&sp)?);
            }
        }
        let pp = self.path(&prompts_file(&self.cfg.source));
        if pp.exists() {
            world.insert_trained(&self.cfg.source, load_corpus(&pp)?, TrainLog::default())?;
        }
        Ok(world)
    }

    fn finish(&mut self, world: Option<&World>) -> Result<()> {
        if let Some(w) = world {
            self.timings.phases.extend(w.timings.phases.iter().cloned());
        }
        write_json(&self.out, "timings.json", &self.timings)?;
        manifest_dir(&self.out)?;
        Ok(())
    }
}

fn missing(path: PathBuf, producer: &str) -> PumaError {
    PumaError::Stage {
        stage: "load",
        source: Box::new(PumaError::Io {
            path,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("run `puma {producer}` first")),
        }),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if let Some(bad) = cli.arm.iter().find(|a| !ARMS.contains(&a.as_str())) {
        return Err(PumaError::Config(format!("unknown arm `{bad}` (expected one of {})", ARMS.join(", "))));
    }
    Ok(cfg)
}

fn gen_data(ctx: &mut Ctx) -> Result<()> {
    let t = Instant::now();
    let world = World::new(ctx.cfg.clone())?;
    save_dataset(&ctx.path(DATASET), &world.dataset, ctx.cfg.data_seed())?;
    write_json(
        &ctx.out,
        "splits.json",
        &serde_json::json!({
            "seed": ctx.cfg.split_seed(),
            "fractions": ctx.cfg.split,
            "train": world.splits.train,
            "val": world.splits.val,
            "test": world.splits.test,
        }),
    )?;
    write_text(&ctx.out, "config.json", &(ctx.cfg.to_json() + "\n"))?;
    ctx.timings.record("gen-data", t);
    ctx.finish(None)
}

fn train_prompts_cmd(ctx: &mut Ctx) -> Result<()> {
    let arm = match ctx.arms.as_slice() {
        [] => "source_perf",
        [one] if one != "puma" => one.as_str(),
        _ => {
            return Err(PumaError::Config(
                "train-prompts takes one of --arm source_perf, full_retrain, random_init".into(),
            ))
        }
    };
    let mut world = ctx.world()?;
    let (family, file) = match arm {
        "source_perf" => (ctx.cfg.source.clone(), prompts_file(&ctx.cfg.source)),
        "full_retrain" => (ctx.cfg.target.clone(), prompts_file(&ctx.cfg.target)),
        _ => (ctx.cfg.target.clone(), RANDOM_INIT.to_string()),
    };
    let hyper = ctx.cfg.prompt_hyper(&family)?;
    save_scorer(&ctx.path(&scorer_file(&family)), world.scorer(&family)?)?;
    let trained = if arm == "random_init" {
        world.random_init(&family)?.clone()
    } else {
        world.trained(&family)?.clone()
    };
    save_corpus(&ctx.path(&file), &trained.corpus, Some(&hyper))?;
    write_json(&ctx.out, &format!("train-log-{arm}.json"), &trained.log)?;
    ctx.finish(Some(&world))
}

fn select_cmd(ctx: &mut Ctx) -> Result<()> {
    let mut world = ctx.world()?;
    let sel = ctx.cfg.selection_for("puma");
    let src = ctx.cfg.source.clone();
    let result = select_for(&mut world, &sel, &src, None)?;
    write_text(&ctx.out, SELECTION, &(result.to_json()? + "\n"))?;
    ctx.finish(Some(&world))
}

fn read_selection(ctx: &Ctx) -> Result<SelectionResult> {
    let p = ctx.need(SELECTION, "select-users")?;
    let text = std::fs::read_to_string(&p).map_err(|e| PumaError::Io { path: p, source: e })?;
    Ok(serde_json::from_str(&text)?)
}

fn train_adapter_cmd(ctx: &mut Ctx) -> Result<()> {
    let mut world = ctx.world()?;
    let selection = read_selection(ctx)?;
    let (src, tgt) = (ctx.cfg.source.clone(), ctx.cfg.target.clone());
    world.ensure_trained(&src)?;
    world.ensure_scorer(&tgt)?;
    let t = Instant::now();
    let corpus = &world.fitted(&src).corpus;
    let target = world.built(&tgt);
    let job = MigrationJob {
        sources: vec![corpus],
        target,
        dataset: &world.dataset,
        train_idx: world.train_idx(),
        users: &selection.users,
        hyper: ctx.cfg.adapter_hyper("puma"),
    };
    let out = train_adapter(&job)?;
    let meta = AdapterMeta {
        source_ids: vec![corpus.scorer_id.clone()],
        source_hashes: out.source_hashes.clone(),
        target_id: target.id(),
        target_hash: out.target_hash.clone(),
        param_count: out.adapter.param_count(),
        hyper: job.hyper.clone(),
        selection: Some(serde_json::to_value(SelectionSummary::from(&selection))?),
    };
    save_adapter(&ctx.path(ADAPTER), &out.adapter, out.head.as_ref(), &meta)?;
    save_scorer(&ctx.path(&scorer_file(&tgt)), target)?;
    write_json(&ctx.out, "train-log-adapter.json", &out.log)?;
    ctx.timings.record("train-adapter", t);
    ctx.finish(Some(&world))
}

fn migrate_cmd(ctx: &mut Ctx) -> Result<()> {
    let mut world = ctx.world()?;
    let (src, tgt) = (ctx.cfg.source.clone(), ctx.cfg.target.clone());
    let (adapter, head) = load_adapter(&ctx.need(ADAPTER, "train-adapter")?)?;
    world.ensure_trained(&src)?;
    world.ensure_scorer(&tgt)?;
    let migrated = migrate_corpus(&adapter, &[&world.fitted(&src).corpus], head, world.built(&tgt))?;
    save_corpus(&ctx.path(MIGRATED), &migrated, None)?;
    ctx.finish(Some(&world))
}

fn evaluate_cmd(ctx: &mut Ctx) -> Result<()> {
    let mut world = ctx.world()?;
    let (src, tgt) = (ctx.cfg.source.clone(), ctx.cfg.target.clone());
    let table = [
        ("full_retrain", prompts_file(&tgt), tgt.clone()),
        ("source_perf", prompts_file(&src), src.clone()),
        ("random_init", RANDOM_INIT.to_string(), tgt.clone()),
        ("puma", MIGRATED.to_string(), tgt.clone()),
    ];
    let mut rows: Vec<(String, String, MetricsReport)> = Vec::new();
    for (arm, file, family) in &table {
        let wanted = ctx.arms.iter().any(|a| a == arm);
        let path = ctx.path(file);
        if !(wanted || ctx.arms.is_empty() && path.exists()) {
            continue;
        }
        let corpus: Corpus = load_corpus(&ctx.need(file, "train-prompts / migrate")?)?;
        world.ensure_scorer(family)?;
        let scorer = world.built(family);
        let m = evaluate(scorer, &corpus, &world.dataset, world.eval_idx())?;
        rows.push((arm.to_string(), scorer.id(), m));
    }
    if rows.is_empty() {
        return Err(missing(ctx.path(MIGRATED), "train-prompts` or `puma migrate"));
    }
    let mut csv = format!("arm,scorer,{CSV_HEADER}\n");
    let mut json = serde_json::Map::new();
    for (arm, scorer, m) in &rows {
        csv.push_str(&format!("{arm},{scorer},{}\n", m.csv_row()));
        json.insert(arm.clone(), serde_json::to_value(m)?);
    }
    write_text(&ctx.out, "metrics.csv", &csv)?;
    write_json(&ctx.out, "metrics.json", &json)?;
    ctx.finish(Some(&world))
}

fn emit(ctx: &mut Ctx, bundle: &ReportBundle, world: Option<&World>) -> Result<()> {
    if let Some(w) = world {
        ctx.timings.phases.extend(w.timings.phases.iter().cloned());
    }
    emit_reports(bundle, &ctx.timings, &ctx.out)?;
    print!("{}", puma_core::harness::summary(bundle));
    Ok(())
}

fn topology_cmd(ctx: &mut Ctx, default: Topology) -> Result<()> {
    let same_kind = std::mem::discriminant(&ctx.cfg.topology) == std::mem::discriminant(&default);
    if !same_kind {
        ctx.cfg.topology = default;
        ctx.cfg.validate()?;
    }
    let mut world = World::new(ctx.cfg.clone())?;
    let bundle = run_experiment(&mut world, &ctx.arms)?;
    emit(ctx, &bundle, Some(&world))
}

fn sweep_cmd(ctx: &mut Ctx) -> Result<()> {
    let seeds: Vec<u64> = (0..ctx.cfg.repeats as u64).map(|i| ctx.cfg.seed + i).collect();
    let (bundle, timings) = run_selection_sweep(&ctx.cfg, &ctx.cfg.sweep_strategies.clone(), &seeds)?;
    ctx.timings.phases.extend(timings.phases);
    emit(ctx, &bundle, None)
}

fn heatmap_cmd(ctx: &mut Ctx) -> Result<()> {
    let mut world = World::new(ctx.cfg.clone())?;
    let families = ctx.cfg.heatmap_families.clone();
    let heat = run_heatmap(&mut world, &families)?;
    let mut bundle = ReportBundle::empty("heatmap", &world);
    bundle.heatmap = Some(heat);
    emit(ctx, &bundle, Some(&world))
}

fn report_cmd(ctx: &mut Ctx) -> Result<()> {
    let mut world = World::new(ctx.cfg.clone())?;
    let bundle = run_experiment(&mut world, &ctx.arms)?;
    emit(ctx, &bundle, Some(&world))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| PumaError::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    let mut ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        arms: cli.arm.clone(),
        timings: Timings::default(),
    };
    let ctx = &mut ctx;
    match cli.command {
        Command::GenData => gen_data(ctx),
        Command::TrainPrompts => train_prompts_cmd(ctx),
        Command::SelectUsers => select_cmd(ctx),
        Command::TrainAdapter => train_adapter_cmd(ctx),
        Command::Migrate => migrate_cmd(ctx),
        Command::Evaluate => evaluate_cmd(ctx),
        Command::Chain => {
            let families = ["alpha", "bravo", "charlie", "delta"].map(String::from).to_vec();
            topology_cmd(ctx, Topology::Chain { families })
        }
        Command::Aggregate => {
            let sources = ["alpha", "charlie"].map(String::from).to_vec();
            topology_cmd(ctx, Topology::Aggregate { sources })
        }
        Command::Sweep => sweep_cmd(ctx),
        Command::Heatmap => heatmap_cmd(ctx),
        Command::Report => report_cmd(ctx),
    }
}

fn exit_code(e: &PumaError) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
