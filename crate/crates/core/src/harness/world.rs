use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{EvalSplit, ExperimentConfig};
use crate::data::{generate_dataset, split, InteractionDataset, Splits};
use crate::error::{Result, StageExt};
use crate::foundation::FrozenScorer;
use crate::metrics::MetricsReport;
use crate::prompt::{evaluate, train_prompts, train_random_init, PromptCorpus, TrainLog};

/// Wall-clock seconds per phase. Kept out of the result files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn record(&mut self, phase: impl Into<String>, since: Instant) {
        self.phases.push((phase.into(), since.elapsed().as_secs_f64()));
    }

    pub fn total(&self) -> f64 {
        self.phases.iter().map(|p| p.1).sum()
    }
}

/// A corpus fitted on one family's scorer, scored on the evaluation split.
#[derive(Clone, Debug)]
pub struct Trained {
    pub corpus: PromptCorpus<f64>,
    pub log: TrainLog,
    pub metrics: MetricsReport,
}

/// Dataset, splits, scorers and fitted corpora of one seed, built on demand
/// and cached so several comparisons can share them.
pub struct World {
    pub cfg: ExperimentConfig,
    pub dataset: InteractionDataset,
    pub splits: Splits,
    scorers: BTreeMap<String, FrozenScorer<f64>>,
    trained: BTreeMap<String, Trained>,
    random_init: BTreeMap<String, Trained>,
    pub timings: Timings,
}

impl World {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let t = Instant::now();
        let dataset = generate_dataset(&cfg.data, cfg.data_seed()).stage("gen-data")?;
        let mut w = Self::from_dataset(cfg, dataset)?;
        w.timings.record("gen-data", t);
        Ok(w)
    }

    /// Uses an existing dataset; the split is still derived from the config seed.
    pub fn from_dataset(cfg: ExperimentConfig, dataset: InteractionDataset) -> Result<Self> {
        cfg.validate()?;
        let splits = split(&dataset, cfg.split, cfg.split_seed()).stage("split")?;
        Ok(World {
            cfg,
            dataset,
            splits,
            scorers: BTreeMap::new(),
            trained: BTreeMap::new(),
            random_init: BTreeMap::new(),
            timings: Timings::default(),
        })
    }

    pub fn eval_idx(&self) -> &[usize] {
        match self.cfg.eval_split {
            EvalSplit::Val => &self.splits.val,
            EvalSplit::Test => &self.splits.test,
        }
    }

    pub fn train_idx(&self) -> &[usize] {
        &self.splits.train
    }

    pub fn ensure_scorer(&mut self, family: &str) -> Result<()> {
        if !self.scorers.contains_key(family) {
            let fam = self.cfg.family(family)?;
            let s = FrozenScorer::build(fam, self.dataset.d_item(), self.cfg.scorer_seed(family)).stage("build-scorer")?;
            self.scorers.insert(family.to_string(), s);
        }
        Ok(())
    }

    pub fn scorer(&mut self, family: &str) -> Result<&FrozenScorer<f64>> {
        self.ensure_scorer(family)?;
        Ok(&self.scorers[family])
    }

    /// A scorer that is already built.
    pub fn built(&self, family: &str) -> &FrozenScorer<f64> {
        &self.scorers[family]
    }

    /// Installs a scorer loaded from disk in place of the derived one.
    pub fn insert_scorer(&mut self, family: &str, scorer: FrozenScorer<f64>) {
        self.scorers.insert(family.to_string(), scorer);
    }

    /// Prompts fitted from scratch on `family`: the source corpus when the family
    /// is a source, the full-retraining baseline when it is a target.
    pub fn ensure_trained(&mut self, family: &str) -> Result<()> {
        if self.trained.contains_key(family) {
            return Ok(());
        }
        self.ensure_scorer(family)?;
        let hyper = self.cfg.prompt_hyper(family)?;
        let t = Instant::now();
        let scorer = &self.scorers[family];
        let out = train_prompts(scorer, &self.dataset, &self.splits.train, &hyper).stage("train-prompts")?;
        let metrics = evaluate(scorer, &out.corpus, &self.dataset, self.eval_idx()).stage("evaluate")?;
        self.timings.record(format!("train-prompts/{family}"), t);
        self.trained.insert(
            family.to_string(),
            Trained {
                corpus: out.corpus,
                log: out.log,
                metrics,
            },
        );
        Ok(())
    }

    pub fn trained(&mut self, family: &str) -> Result<&Trained> {
        self.ensure_trained(family)?;
        Ok(&self.trained[family])
    }

    /// A fitted corpus that is already cached.
    pub fn fitted(&self, family: &str) -> &Trained {
        &self.trained[family]
    }

    /// Installs a corpus loaded from disk in place of training one.
    pub fn insert_trained(&mut self, family: &str, corpus: PromptCorpus<f64>, log: TrainLog) -> Result<()> {
        self.ensure_scorer(family)?;
        let metrics = evaluate(&self.scorers[family], &corpus, &self.dataset, self.eval_idx()).stage("evaluate")?;
        self.trained.insert(family.to_string(), Trained { corpus, log, metrics });
        Ok(())
    }

    /// Random frozen prompts with a trained head on `family`.
    pub fn random_init(&mut self, family: &str) -> Result<&Trained> {
        if !self.random_init.contains_key(family) {
            self.ensure_scorer(family)?;
            let hyper = self.cfg.prompt_hyper(family)?;
            let t = Instant::now();
            let scorer = &self.scorers[family];
            let out = train_random_init(scorer, &self.dataset, &self.splits.train, &hyper).stage("random-init")?;
            let metrics = evaluate(scorer, &out.corpus, &self.dataset, self.eval_idx()).stage("evaluate")?;
            self.timings.record(format!("random-init/{family}"), t);
            self.random_init.insert(
                family.to_string(),
                Trained {
                    corpus: out.corpus,
                    log: out.log,
                    metrics,
                },
            );
        }
        Ok(&self.random_init[family])
    }
}
