use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterHyper;
use crate::data::DataConfig;
use crate::error::{PumaError, Result};
use crate::foundation::{ScorerFamily, BUILTIN_FAMILIES};
use crate::numeric::derive_seed;
use crate::prompt::TrainHyper;
use crate::selection::{SelectionConfig, Strategy};

/// Version of the JSON config schema accepted by [`ExperimentConfig::from_json`].
pub const SCHEMA_VERSION: u32 = 1;

/// Which migration topology an experiment runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// `source -> target`.
    Direct,
    /// `families[0] -> families[1] -> ...`, one adapter per hop.
    Chain { families: Vec<String> },
    /// Prompts from every family in `sources` concatenated into one adapter input.
    Aggregate { sources: Vec<String> },
}

/// Which held-out split the arms are scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Val,
    Test,
}

/// Full description of one experiment. Every field has a default, so `{}`
/// is a valid config. Nested `seed` fields are ignored: each stage derives its
/// seed from the global `seed` and the stage name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub data: DataConfig,
    /// Train/validation/test fractions.
    pub split: (f64, f64, f64),
    pub source: String,
    pub target: String,
    /// Explicit scorer seeds by family; missing ones are derived.
    pub scorer_seeds: BTreeMap<String, u64>,
    /// Families beyond the five built-ins.
    pub families: Vec<ScorerFamily>,
    pub prompt: TrainHyper,
    pub adapter: AdapterHyper,
    pub selection: SelectionConfig,
    /// Coreset size as a fraction of all users; overrides `selection.budget`.
    pub budget_fraction: Option<f64>,
    pub topology: Topology,
    pub eval_split: EvalSplit,
    /// Paired seeds `seed, seed + 1, ...` used by the selection sweep.
    pub repeats: usize,
    pub sweep_strategies: Vec<Strategy>,
    pub heatmap_families: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            data: DataConfig::default(),
            split: (0.8, 0.1, 0.1),
            source: "alpha".into(),
            target: "bravo".into(),
            scorer_seeds: BTreeMap::new(),
            families: Vec::new(),
            prompt: TrainHyper {
                epochs: 15,
                lr: 1e-2,
                ..TrainHyper::default()
            },
            adapter: AdapterHyper {
                epochs: 12,
                lr: 3e-3,
                init_scale: 0.03,
                weight_decay: 0.3,
                ..AdapterHyper::default()
            },
            selection: SelectionConfig {
                strategy: Strategy::KmeansVarStrat,
                ..SelectionConfig::default()
            },
            budget_fraction: Some(0.2),
            topology: Topology::Direct,
            eval_split: EvalSplit::Test,
            repeats: 5,
            sweep_strategies: Strategy::ALL.to_vec(),
            heatmap_families: BUILTIN_FAMILIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| PumaError::Config(format!("config is not valid JSON: {e}")))?;
        if let Some(v) = raw.get("schema_version") {
            if v.as_u64() != Some(SCHEMA_VERSION as u64) {
                return Err(PumaError::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")));
            }
        }
        let cfg: ExperimentConfig = serde_json::from_value(raw).map_err(|e| PumaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PumaError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Looks `name` up among the configured and built-in families, with the
    /// head matching the dataset task.
    pub fn family(&self, name: &str) -> Result<ScorerFamily> {
        if let Some(f) = self.families.iter().find(|f| f.name == name) {
            if f.head != self.data.task.head() {
                return Err(PumaError::Config(format!(
                    "family `{name}` has a {:?} head but the task is {}",
                    f.head,
                    self.data.task.name()
                )));
            }
            return Ok(f.clone());
        }
        ScorerFamily::builtin(name, self.data.task.head())
    }

    pub fn scorer_seed(&self, family: &str) -> u64 {
        self.scorer_seeds
            .get(family)
            .copied()
            .unwrap_or_else(|| derive_seed(self.seed, &format!("scorer/{family}")))
    }

    pub fn budget(&self) -> usize {
        match self.budget_fraction {
            Some(f) => ((f * self.data.n_users as f64).round() as usize).clamp(1, self.data.n_users),
            None => self.selection.budget.min(self.data.n_users),
        }
    }

    /// The selection config with the resolved budget and derived seed.
    pub fn selection_for(&self, stage: &str) -> SelectionConfig {
        SelectionConfig {
            budget: self.budget(),
            seed: derive_seed(self.seed, &format!("selection/{stage}")),
            ..self.selection.clone()
        }
    }

    pub fn prompt_hyper(&self, family: &str) -> Result<TrainHyper> {
        Ok(TrainHyper {
            seed: derive_seed(self.seed, &format!("prompts/{family}")),
            prompt_len: self.family(family)?.prompt_len,
            ..self.prompt.clone()
        })
    }

    pub fn adapter_hyper(&self, stage: &str) -> AdapterHyper {
        AdapterHyper {
            seed: derive_seed(self.seed, &format!("adapter/{stage}")),
            ..self.adapter.clone()
        }
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, "data")
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    /// Every family the topology touches, in first-use order.
    pub fn referenced_families(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |s: &String| {
            if !out.contains(s) {
                out.push(s.clone());
            }
        };
        match &self.topology {
            Topology::Direct => {
                push(&self.source);
                push(&self.target);
            }
            Topology::Chain { families } => families.iter().for_each(&mut push),
            Topology::Aggregate { sources } => {
                sources.iter().for_each(&mut push);
                push(&self.target);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PumaError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        self.data.validate()?;
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|x| !(*x >= 0.0)) || a <= 0.0 || c + b <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions must be non-negative, with train > 0, and sum to 1 (got {a}, {b}, {c})"
            ));
        }
        self.prompt.validate()?;
        self.adapter.validate()?;
        self.selection.validate()?;
        if let Some(f) = self.budget_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("budget_fraction must lie in (0, 1], got {f}"));
            }
        }
        for f in &self.families {
            f.validate()?;
            if BUILTIN_FAMILIES.contains(&f.name.as_str()) {
                return bad(format!("custom family `{}` shadows a built-in", f.name));
            }
        }
        match &self.topology {
            Topology::Chain { families } if families.len() < 2 => return bad("a chain needs at least two families".into()),
            Topology::Aggregate { sources } if sources.len() < 2 => return bad("aggregation needs at least two sources".into()),
            Topology::Aggregate { sources } if sources.contains(&self.target) => return bad("aggregation target must differ from its sources".into()),
            _ => {}
        }
        for name in self.referenced_families().iter().chain(&self.heatmap_families) {
            self.family(name)?;
        }
        if self.repeats == 0 || self.sweep_strategies.is_empty() {
            return bad("repeats and sweep_strategies must be non-empty".into());
        }
        if self.heatmap_families.len() < 2 {
            return bad("a heatmap needs at least two families".into());
        }
        Ok(())
    }
}

/// Instrumented training cost. Counts come from inside the training loops.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Record passes spent training the migration adapter.
    pub adapter_records: u64,
    /// Record passes spent refitting every prompt on the target.
    pub full_retrain_records: u64,
    /// `adapter_records / full_retrain_records` when both were measured.
    pub cost_ratio: Option<f64>,
}

impl CostLedger {
    pub fn new(adapter_records: u64, full_retrain_records: u64) -> Self {
        let cost_ratio = (adapter_records > 0 && full_retrain_records > 0).then(|| adapter_records as f64 / full_retrain_records as f64);
        CostLedger {
            adapter_records,
            full_retrain_records,
            cost_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json("{\"schema_version\": 7}").unwrap_err().is_config());
        assert!(ExperimentConfig::from_json("{\"bogus\": 1}").is_err());
        assert!(ExperimentConfig::from_json("{\"target\": \"zulu\"}").is_err());
        assert!(ExperimentConfig::from_json("{\"budget_fraction\": 0.0}").is_err());
        assert!(ExperimentConfig::from_json("{\"split\": [0.5, 0.5, 0.5]}").is_err());
        assert!(ExperimentConfig::from_json("{\"topology\": {\"kind\": \"chain\", \"families\": [\"alpha\"]}}").is_err());
        assert!(ExperimentConfig::from_json("not json").unwrap_err().is_config());
    }

    #[test]
    fn topology_and_families() {
        let cfg = ExperimentConfig::from_json(
            r#"{"topology": {"kind": "aggregate", "sources": ["alpha", "charlie"]}, "target": "bravo",
                "scorer_seeds": {"alpha": 5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.referenced_families(), vec!["alpha", "charlie", "bravo"]);
        assert_eq!(cfg.scorer_seed("alpha"), 5);
        assert_ne!(cfg.scorer_seed("charlie"), cfg.scorer_seed("bravo"));
        assert_eq!(cfg.budget(), 100);
    }

    #[test]
    fn ledger_ratio() {
        let l = CostLedger::new(40 * 12, 200 * 15);
        assert!((l.cost_ratio.unwrap() - 0.16).abs() < 1e-12);
        assert_eq!(CostLedger::new(0, 10).cost_ratio, None);
    }
}
