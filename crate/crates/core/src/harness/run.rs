use serde::{Deserialize, Serialize};

use super::config::{CostLedger, ExperimentConfig, Topology, SCHEMA_VERSION};
use super::world::{Timings, World};
use crate::adapter::{chain_migrate, migrate_once, MigrationRun};
use crate::data::{stats, DatasetStats, Task};
use crate::error::{PumaError, Result, StageExt};
use crate::metrics::{gain_ratio, MetricsReport};
use crate::prompt::PromptCorpus;
use crate::selection::{select_users, SelectionConfig, SelectionInputs, SelectionResult, Strategy};

/// Arms of a direct experiment, in report order.
pub const ARMS: [&str; 4] = ["full_retrain", "source_perf", "random_init", "puma"];

/// One evaluated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub arm: String,
    /// Id of the scorer the prompts were evaluated on.
    pub scorer: String,
    /// Where the evaluated prompts came from.
    pub prompts: String,
    pub metrics: MetricsReport,
    /// Record passes spent producing this arm.
    pub records_processed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub strategy: String,
    pub budget: usize,
    pub k: usize,
    pub users: Vec<usize>,
}

impl From<&SelectionResult> for SelectionSummary {
    fn from(s: &SelectionResult) -> Self {
        SelectionSummary {
            strategy: s.strategy.name().to_string(),
            budget: s.budget,
            k: s.audit.k,
            users: s.users.clone(),
        }
    }
}

/// Hashes of the frozen inputs of one adapter run, before and after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenCheck {
    pub stage: String,
    pub source_hashes_before: Vec<String>,
    pub source_hashes_after: Vec<String>,
    pub target_hash_before: String,
    pub target_hash_after: String,
}

impl FrozenCheck {
    pub fn intact(&self) -> bool {
        self.source_hashes_before == self.source_hashes_after && self.target_hash_before == self.target_hash_after
    }
}

/// One hop of a chained migration next to full retraining on the same target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopRow {
    pub hop: usize,
    pub source: String,
    pub target: String,
    pub migrated: MetricsReport,
    pub full_retrain: MetricsReport,
    pub adapter_records: u64,
    pub selection: SelectionSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapReport {
    pub families: Vec<String>,
    /// `gain[s][t]`: retrained / migrated RMSE (click: migrated / retrained AUC).
    pub gain: Vec<Vec<f64>>,
    pub retrained: Vec<f64>,
    pub migrated: Vec<Vec<Option<f64>>>,
}

impl HeatmapReport {
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.families.len();
        let mut sum = 0.0;
        for s in 0..n {
            for t in 0..n {
                if s != t {
                    sum += self.gain[s][t];
                }
            }
        }
        sum / (n * (n - 1)) as f64
    }
}

/// A selection strategy's post-migration metrics over paired seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: String,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricsReport>,
    pub mean: Stat,
    pub sd: Stat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub auc: Option<f64>,
    pub uauc: Option<f64>,
}

fn mean_sd(xs: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    if v.is_empty() || v.len() != xs.len() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(m), Some(sd))
}

impl SweepRow {
    pub fn new(strategy: String, budget: usize, seeds: Vec<u64>, per_seed: Vec<MetricsReport>) -> Self {
        let col = |f: fn(&MetricsReport) -> Option<f64>| mean_sd(&per_seed.iter().map(f).collect::<Vec<_>>());
        let (rm, rs) = col(|m| m.rmse);
        let (mm, ms) = col(|m| m.mae);
        let (am, asd) = col(|m| m.auc);
        let (um, us) = col(|m| m.uauc);
        SweepRow {
            strategy,
            budget,
            seeds,
            per_seed,
            mean: Stat {
                rmse: rm,
                mae: mm,
                auc: am,
                uauc: um,
            },
            sd: Stat {
                rmse: rs,
                mae: ms,
                auc: asd,
                uauc: us,
            },
        }
    }

    /// Mean metrics as a report, for the shared CSV columns.
    pub fn mean_report(&self) -> MetricsReport {
        let first = &self.per_seed[0];
        MetricsReport {
            task: first.task,
            n_eval: first.n_eval,
            rmse: self.mean.rmse,
            mae: self.mean.mae,
            auc: self.mean.auc,
            uauc: self.mean.uauc,
            uauc_excluded_users: first.uauc_excluded_users,
            rmse_class_expectation: None,
            per_user: None,
        }
    }
}

/// Everything one command produced. Deterministic given config and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetStats,
    pub arms: Vec<ArmRow>,
    pub selection: Option<SelectionSummary>,
    pub ledger: Option<CostLedger>,
    pub frozen: Vec<FrozenCheck>,
    pub chain: Vec<HopRow>,
    pub heatmap: Option<HeatmapReport>,
    pub sweep: Vec<SweepRow>,
}

impl ReportBundle {
    pub fn empty(command: &str, world: &World) -> Self {
        ReportBundle {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config: world.cfg.clone(),
            dataset: stats(&world.dataset),
            arms: Vec::new(),
            selection: None,
            ledger: None,
            frozen: Vec::new(),
            chain: Vec::new(),
            heatmap: None,
            sweep: Vec::new(),
        }
    }

    pub fn arm(&self, name: &str) -> Option<&ArmRow> {
        self.arms.iter().find(|a| a.arm == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }
}

/// A trained adapter run with the coreset it used.
pub struct Migration {
    pub selection: SelectionResult,
    pub run: MigrationRun<f64>,
    pub frozen: FrozenCheck,
}

/// Picks the coreset from `corpus`, which was fitted on (or migrated into) `family`.
pub fn select_for(world: &mut World, sel: &SelectionConfig, family: &str, corpus: Option<&PromptCorpus<f64>>) -> Result<SelectionResult> {
    world.ensure_scorer(family)?;
    if corpus.is_none() {
        world.ensure_trained(family)?;
    }
    let corpus = corpus.unwrap_or_else(|| &world.fitted(family).corpus);
    let inputs = SelectionInputs {
        corpus,
        dataset: &world.dataset,
        train_idx: world.train_idx(),
        scorer: Some(world.built(family)),
    };
    select_users(sel, &inputs).stage("select-users")
}

/// Trains an adapter from the fitted corpora of `sources` into `target` on
/// the given users, migrates everybody and evaluates.
pub fn migrate_users(world: &mut World, sources: &[&str], target: &str, selection: SelectionResult, stage: &str) -> Result<Migration> {
    for s in sources {
        world.ensure_trained(s)?;
    }
    world.ensure_scorer(target)?;
    let hyper = world.cfg.adapter_hyper(stage);
    let corpora: Vec<&PromptCorpus<f64>> = sources.iter().map(|s| &world.fitted(s).corpus).collect();
    let scorer = world.built(target);
    let t = std::time::Instant::now();
    let run = migrate_once(
        &corpora,
        scorer,
        &world.dataset,
        world.train_idx(),
        selection.users.clone(),
        world.eval_idx(),
        &hyper,
    )
    .stage("train-adapter")?;
    let frozen = FrozenCheck {
        stage: stage.to_string(),
        source_hashes_before: run.outcome.source_hashes.clone(),
        source_hashes_after: corpora.iter().map(|c| c.prompt_hash()).collect(),
        target_hash_before: run.outcome.target_hash.clone(),
        target_hash_after: scorer.weight_hash(),
    };
    world.timings.record(format!("migrate/{stage}"), t);
    Ok(Migration { selection, run, frozen })
}

/// Coreset of `budget` users picked by `strategy` from the source corpus, then
/// a direct `source -> target` migration. Every call with the same `stage`
/// shares the adapter initialisation, so strategies compare paired.
pub fn migrate_with(world: &mut World, strategy: Strategy, budget: usize, stage: &str) -> Result<Migration> {
    let (src, tgt) = (world.cfg.source.clone(), world.cfg.target.clone());
    let sel = SelectionConfig {
        strategy,
        budget,
        ..world.cfg.selection_for(stage)
    };
    let selection = select_for(world, &sel, &src, None)?;
    migrate_users(world, &[&src], &tgt, selection, stage)
}

fn arm_row(arm: &str, scorer: String, prompts: &str, metrics: &MetricsReport, records: u64) -> ArmRow {
    ArmRow {
        arm: arm.to_string(),
        scorer,
        prompts: prompts.to_string(),
        metrics: metrics.clone(),
        records_processed: records,
    }
}

/// Runs the configured topology. `arms` filters the direct-topology arms
/// (empty = all); chain and aggregate runs always produce their full rows.
pub fn run_experiment(world: &mut World, arms: &[String]) -> Result<ReportBundle> {
    if let Some(bad) = arms.iter().find(|a| !ARMS.contains(&a.as_str())) {
        return Err(PumaError::Config(format!("unknown arm `{bad}` (expected one of {})", ARMS.join(", "))));
    }
    match world.cfg.topology.clone() {
        Topology::Direct => run_direct(world, arms),
        Topology::Chain { families } => run_chain(world, &families),
        Topology::Aggregate { sources } => run_aggregate(world, &sources),
    }
}

fn run_direct(world: &mut World, arms: &[String]) -> Result<ReportBundle> {
    let want = |a: &str| arms.is_empty() || arms.iter().any(|x| x == a);
    let (src, tgt) = (world.cfg.source.clone(), world.cfg.target.clone());
    let mut bundle = ReportBundle::empty("direct", world);
    let mut full_records = None;
    if want("full_retrain") {
        let id = world.scorer(&tgt)?.id();
        let t = world.trained(&tgt)?;
        full_records = Some(t.log.records_processed);
        bundle.arms.push(arm_row(
            "full_retrain",
            id,
            "fitted from scratch on the target",
            &t.metrics,
            t.log.records_processed,
        ));
    }
    if want("source_perf") {
        let id = world.scorer(&src)?.id();
        let t = world.trained(&src)?;
        bundle.arms.push(arm_row(
            "source_perf",
            id,
            "source prompts on the source scorer",
            &t.metrics,
            t.log.records_processed,
        ));
    }
    if want("random_init") {
        let id = world.scorer(&tgt)?.id();
        let t = world.random_init(&tgt)?;
        bundle.arms.push(arm_row(
            "random_init",
            id,
            "random frozen prompts, trained head",
            &t.metrics,
            t.log.records_processed,
        ));
    }
    if want("puma") {
        let budget = world.cfg.budget();
        let strategy = world.cfg.selection.strategy;
        let m = migrate_with(world, strategy, budget, "puma")?;
        let records = m.run.outcome.log.records_processed;
        bundle.arms.push(arm_row(
            "puma",
            world.built(&tgt).id(),
            "source prompts migrated by the adapter",
            &m.run.metrics,
            records,
        ));
        bundle.selection = Some(SelectionSummary::from(&m.selection));
        bundle.frozen.push(m.frozen);
        if let Some(full) = full_records {
            bundle.ledger = Some(CostLedger::new(records, full));
        }
    }
    bundle.arms.sort_by_key(|a| ARMS.iter().position(|x| *x == a.arm));
    Ok(bundle)
}

fn run_chain(world: &mut World, families: &[String]) -> Result<ReportBundle> {
    for f in families {
        world.ensure_trained(f)?;
    }
    let mut bundle = ReportBundle::empty("chain", world);
    let first = &families[0];
    let t0 = world.fitted(first);
    bundle.arms.push(arm_row(
        "source_perf",
        world.built(first).id(),
        "source prompts on the source scorer",
        &t0.metrics,
        t0.log.records_processed,
    ));
    let hyper = world.cfg.adapter_hyper("chain");
    let mut selections: Vec<SelectionResult> = Vec::new();
    let runs = {
        let w: &World = world;
        let scorers: Vec<_> = families.iter().map(|f| w.built(f)).collect();
        chain_migrate(
            &scorers,
            &w.fitted(first).corpus,
            &w.dataset,
            w.train_idx(),
            w.eval_idx(),
            &hyper,
            |hop, corpus| {
                let sel = w.cfg.selection_for(&format!("chain/hop{hop}"));
                let inputs = SelectionInputs {
                    corpus,
                    dataset: &w.dataset,
                    train_idx: w.train_idx(),
                    scorer: Some(scorers[hop]),
                };
                let s = select_users(&sel, &inputs)?;
                let users = s.users.clone();
                selections.push(s);
                Ok(users)
            },
        )
        .stage("chain")?
    };
    let mut adapter_total = 0;
    let mut full_total = 0;
    for (hop, run) in runs.iter().enumerate() {
        let (s, t) = (&families[hop], &families[hop + 1]);
        let full = world.fitted(t);
        let before = match hop {
            0 => world.fitted(s).corpus.prompt_hash(),
            _ => runs[hop - 1].corpus.prompt_hash(),
        };
        bundle.frozen.push(FrozenCheck {
            stage: format!("chain/hop{}", hop + 1),
            source_hashes_before: run.outcome.source_hashes.clone(),
            source_hashes_after: vec![before],
            target_hash_before: run.outcome.target_hash.clone(),
            target_hash_after: world.built(t).weight_hash(),
        });
        let records = run.outcome.log.records_processed;
        adapter_total += records;
        full_total += full.log.records_processed;
        bundle.arms.push(arm_row(
            &format!("full_retrain/{t}"),
            world.built(t).id(),
            "fitted from scratch on the target",
            &full.metrics,
            full.log.records_processed,
        ));
        bundle.arms.push(arm_row(
            &format!("puma/{t}"),
            world.built(t).id(),
            &format!("hop {} of the chain from {first}", hop + 1),
            &run.metrics,
            records,
        ));
        bundle.chain.push(HopRow {
            hop: hop + 1,
            source: s.clone(),
            target: t.clone(),
            migrated: run.metrics.clone(),
            full_retrain: full.metrics.clone(),
            adapter_records: records,
            selection: SelectionSummary::from(&selections[hop]),
        });
    }
    bundle.ledger = Some(CostLedger::new(adapter_total, full_total));
    Ok(bundle)
}

fn run_aggregate(world: &mut World, sources: &[String]) -> Result<ReportBundle> {
    let tgt = world.cfg.target.clone();
    for s in sources {
        world.ensure_trained(s)?;
    }
    world.ensure_trained(&tgt)?;
    let mut bundle = ReportBundle::empty("aggregate", world);
    let full = world.fitted(&tgt);
    let full_records = full.log.records_processed;
    bundle.arms.push(arm_row(
        "full_retrain",
        world.built(&tgt).id(),
        "fitted from scratch on the target",
        &full.metrics,
        full_records,
    ));
    let sel = world.cfg.selection_for("aggregate");
    let selection = select_for(world, &sel, &sources[0], None)?;
    for s in sources {
        let m = migrate_users(world, &[s.as_str()], &tgt, selection.clone(), "aggregate")?;
        bundle.arms.push(arm_row(
            &format!("puma/{s}"),
            world.built(&tgt).id(),
            &format!("prompts from {s} alone"),
            &m.run.metrics,
            m.run.outcome.log.records_processed,
        ));
        bundle.frozen.push(m.frozen);
    }
    let names: Vec<&str> = sources.iter().map(String::as_str).collect();
    let m = migrate_users(world, &names, &tgt, selection, "aggregate")?;
    let records = m.run.outcome.log.records_processed;
    bundle.arms.push(arm_row(
        "puma_aggregate",
        world.built(&tgt).id(),
        &format!("prompts from {} concatenated", names.join(" + ")),
        &m.run.metrics,
        records,
    ));
    bundle.selection = Some(SelectionSummary::from(&m.selection));
    bundle.frozen.push(m.frozen);
    bundle.ledger = Some(CostLedger::new(records, full_records));
    Ok(bundle)
}

/// Cross-scorer gain: retrained / migrated RMSE for ratings, migrated /
/// retrained AUC for clicks. Above one means migration won.
pub fn cross_gain(task: Task, retrained: &MetricsReport, migrated: &MetricsReport) -> Result<f64> {
    let missing = || PumaError::UndefinedMetric("heatmap cell lacks its headline metric".into());
    match task {
        Task::Rating => gain_ratio(retrained.rmse.ok_or_else(missing)?, migrated.rmse.ok_or_else(missing)?),
        Task::Click => gain_ratio(migrated.auc.ok_or_else(missing)?, retrained.auc.ok_or_else(missing)?),
    }
}

/// Migration gain for every ordered pair of `families`; the diagonal is 1.
pub fn run_heatmap(world: &mut World, families: &[String]) -> Result<HeatmapReport> {
    if families.len() < 2 {
        return Err(PumaError::Config("a heatmap needs at least two families".into()));
    }
    for f in families {
        world.ensure_trained(f)?;
    }
    let n = families.len();
    let task = world.dataset.task;
    let mut gain = vec![vec![1.0; n]; n];
    let mut migrated = vec![vec![None; n]; n];
    let retrained: Vec<f64> = families.iter().map(|f| world.fitted(f).metrics.headline()).collect();
    for (s, src) in families.iter().enumerate() {
        let sel = world.cfg.selection_for(&format!("heatmap/{src}"));
        let selection = select_for(world, &sel, src, None)?;
        for (t, tgt) in families.iter().enumerate() {
            if s == t {
                continue;
            }
            let m = migrate_users(world, &[src.as_str()], tgt, selection.clone(), &format!("heatmap/{src}->{tgt}"))?;
            gain[s][t] = cross_gain(task, &world.fitted(tgt).metrics, &m.run.metrics)?;
            migrated[s][t] = Some(m.run.metrics.headline());
        }
    }
    Ok(HeatmapReport {
        families: families.to_vec(),
        gain,
        retrained,
        migrated,
    })
}

/// Name of the extra arm that trains on a random coreset three times larger.
pub const RANDOM_3X: &str = "random_3x";

/// Post-migration metrics of each strategy on one world, plus the random arm
/// at three times the budget.
pub fn sweep_world(world: &mut World, strategies: &[Strategy]) -> Result<Vec<(String, usize, MetricsReport)>> {
    let budget = world.cfg.budget();
    let mut out = Vec::with_capacity(strategies.len() + 1);
    for &s in strategies {
        let m = migrate_with(world, s, budget, "sweep")?;
        out.push((s.name().to_string(), m.selection.users.len(), m.run.metrics));
    }
    let big = (3 * budget).min(world.dataset.n_users);
    let m = migrate_with(world, Strategy::Random, big, "sweep")?;
    out.push((RANDOM_3X.to_string(), m.selection.users.len(), m.run.metrics));
    Ok(out)
}

/// Paired comparison of selection strategies over `seeds`: every strategy sees
/// the same data, splits, source prompts and adapter initialisation per seed.
pub fn run_selection_sweep(cfg: &ExperimentConfig, strategies: &[Strategy], seeds: &[u64]) -> Result<(ReportBundle, Timings)> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(PumaError::Config("a sweep needs at least one strategy and one seed".into()));
    }
    let mut cells: Vec<Vec<(String, usize, MetricsReport)>> = Vec::new();
    let mut timings = Timings::default();
    let mut bundle = None;
    for &seed in seeds {
        let mut world = World::new(ExperimentConfig { seed, ..cfg.clone() })?;
        cells.push(sweep_world(&mut world, strategies)?);
        if bundle.is_none() {
            let mut b = ReportBundle::empty("sweep", &world);
            b.config = cfg.clone();
            bundle = Some(b);
        }
        for (name, secs) in world.timings.phases {
            timings.phases.push((format!("seed{seed}/{name}"), secs));
        }
    }
    let mut bundle = bundle.expect("at least one seed");
    for i in 0..cells[0].len() {
        let per_seed: Vec<MetricsReport> = cells.iter().map(|c| c[i].2.clone()).collect();
        bundle
            .sweep
            .push(SweepRow::new(cells[0][i].0.clone(), cells[0][i].1, seeds.to_vec(), per_seed));
    }
    Ok((bundle, timings))
}
