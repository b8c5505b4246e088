//! Synthetic user-item interaction data.
//!
//! Users and items carry Gaussian latents `z_u ~ N(0, I)` and
//! `x_i ~ N(0, I / d_latent)`. Ratings are
//! `clamp(round(3 + 1.5 <z_u, x_i> + eps), 1, 5)` with `eps ~ N(0, noise_sd^2)`;
//! clicks are `Bernoulli(sigmoid(<z_u, x_i> + click_bias))`. Item embeddings
//! are a fixed random lift of `x_i` to `d_item` dimensions plus Gaussian
//! distortion, rounded to `f32` precision so that they survive persistence
//! unchanged. The user latents stay inside the generator's output and have
//! no public accessor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PumaError, Result};
use crate::numeric::{sigmoid, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rating,
    Click,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Rating => "rating",
            Task::Click => "click",
        }
    }

    pub fn head(self) -> crate::foundation::HeadKind {
        match self {
            Task::Rating => crate::foundation::HeadKind::Rating5,
            Task::Click => crate::foundation::HeadKind::Click1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: usize,
    pub embed: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub user: u32,
    pub item: u32,
    pub y: f64,
}

/// How the click logit offset is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickBias {
    Fixed(f64),
    /// Bisect the offset until the expected positive ratio over the drawn
    /// (user, item) pairs equals the target.
    Calibrate {
        positive_ratio: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub task: Task,
    pub n_users: usize,
    pub n_items: usize,
    pub mean_records_per_user: f64,
    pub d_latent: usize,
    pub d_item: usize,
    pub noise_sd: f64,
    pub item_noise_sd: f64,
    pub click_bias: ClickBias,
}

/// Positive ratio of the click corpus being mimicked.
pub const MIND_POSITIVE_RATIO: f64 = 0.178;

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            task: Task::Rating,
            n_users: 500,
            n_items: 1000,
            mean_records_per_user: 40.0,
            d_latent: 8,
            d_item: 16,
            noise_sd: 0.5,
            item_noise_sd: 0.3,
            click_bias: ClickBias::Calibrate {
                positive_ratio: MIND_POSITIVE_RATIO,
            },
        }
    }
}

impl DataConfig {
    pub fn click() -> Self {
        DataConfig {
            task: Task::Click,
            ..DataConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PumaError::Config(format!("dataset: {m}")));
        if self.n_users == 0 || self.n_items < 2 || self.d_latent == 0 || self.d_item == 0 {
            return bad("counts and dimensions must be positive (n_items >= 2)");
        }
        if self.n_users > u32::MAX as usize || self.n_items > u32::MAX as usize {
            return bad("counts exceed u32");
        }
        if !(self.mean_records_per_user > 0.0) || !self.mean_records_per_user.is_finite() {
            return bad("mean_records_per_user must be positive");
        }
        if !(self.noise_sd >= 0.0) || !(self.item_noise_sd >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if let ClickBias::Calibrate { positive_ratio } = self.click_bias {
            if !(positive_ratio > 0.0 && positive_ratio < 1.0) {
                return bad("target positive ratio must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

/// Generator state that training code never sees.
#[derive(Clone, Debug, PartialEq)]
struct Latents {
    users: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    pub task: Task,
    pub n_users: usize,
    pub items: Vec<Item>,
    pub records: Vec<Record>,
    /// Click logit offset actually used (click task only).
    pub click_bias: Option<f64>,
    latent: Option<Latents>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub task: Task,
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub records_per_user: f64,
    pub sparsity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_ratio: Option<f64>,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_click_bias(scores: &[f64], target: f64) -> f64 {
    let ratio = |b: f64| scores.iter().map(|&s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a dataset; identical `(cfg, seed)` give identical datasets.
pub fn generate_dataset(cfg: &DataConfig, seed: u64) -> Result<InteractionDataset> {
    cfg.validate()?;
    let mut rng = Rng::for_stage(seed, "data");
    let user_lat: Vec<Vec<f64>> = (0..cfg.n_users).map(|_| (0..cfg.d_latent).map(|_| rng.normal()).collect()).collect();
    let item_sd = (1.0 / cfg.d_latent as f64).sqrt();
    let item_lat: Vec<Vec<f64>> = (0..cfg.n_items)
        .map(|_| (0..cfg.d_latent).map(|_| rng.normal() * item_sd).collect())
        .collect();

    // Lift x_i to d_item dims with a fixed N(0, 1) mixing matrix, then distort.
    let lift: Vec<Vec<f64>> = (0..cfg.d_latent).map(|_| (0..cfg.d_item).map(|_| rng.normal()).collect()).collect();
    let items: Vec<Item> = item_lat
        .iter()
        .enumerate()
        .map(|(id, x)| {
            let embed = (0..cfg.d_item)
                .map(|j| {
                    let clean: f64 = x.iter().zip(&lift).map(|(xi, row)| xi * row[j]).sum();
                    round_f32(clean + cfg.item_noise_sd * rng.normal())
                })
                .collect();
            Item { id, embed }
        })
        .collect();

    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for u in 0..cfg.n_users {
        let n = (rng.poisson(cfg.mean_records_per_user) as usize).clamp(2, cfg.n_items);
        for i in rng.sample_indices(cfg.n_items, n) {
            pairs.push((u as u32, i as u32));
        }
    }
    let scores: Vec<f64> = pairs.iter().map(|&(u, i)| dot(&user_lat[u as usize], &item_lat[i as usize])).collect();

    let (records, click_bias) = match cfg.task {
        Task::Rating => {
            let recs = pairs
                .iter()
                .zip(&scores)
                .map(|(&(user, item), &s)| {
                    let raw = 3.0 + 1.5 * s + cfg.noise_sd * rng.normal();
                    Record {
                        user,
                        item,
                        y: raw.round().clamp(1.0, 5.0),
                    }
                })
                .collect();
            (recs, None)
        }
        Task::Click => {
            let bias = match cfg.click_bias {
                ClickBias::Fixed(b) => b,
                ClickBias::Calibrate { positive_ratio } => solve_click_bias(&scores, positive_ratio),
            };
            let recs = pairs
                .iter()
                .zip(&scores)
                .map(|(&(user, item), &s)| Record {
                    user,
                    item,
                    y: if rng.bernoulli(sigmoid(s + bias)) { 1.0 } else { 0.0 },
                })
                .collect();
            (recs, Some(bias))
        }
    };

    Ok(InteractionDataset {
        task: cfg.task,
        n_users: cfg.n_users,
        items,
        records,
        click_bias,
        latent: Some(Latents { users: user_lat }),
    })
}

impl InteractionDataset {
    /// Assembles a dataset from stored parts, validating labels and user coverage.
    pub fn from_parts(task: Task, n_users: usize, items: Vec<Item>, records: Vec<Record>) -> Result<Self> {
        let ds = InteractionDataset {
            task,
            n_users,
            items,
            records,
            click_bias: None,
            latent: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let d_item = self.d_item();
        if self
            .items
            .iter()
            .any(|it| it.embed.len() != d_item || it.embed.iter().any(|v| !v.is_finite()))
        {
            return Err(PumaError::Config("item embeddings must share one width and be finite".into()));
        }
        let mut counts = vec![0usize; self.n_users];
        for r in &self.records {
            let (u, i) = (r.user as usize, r.item as usize);
            if u >= self.n_users || i >= self.items.len() {
                return Err(PumaError::OutOfRange {
                    what: "record index",
                    value: u.max(i) as f64,
                    limit: self.n_users.max(self.items.len()) as f64,
                });
            }
            let ok = match self.task {
                Task::Rating => (1.0..=5.0).contains(&r.y) && r.y.fract() == 0.0,
                Task::Click => r.y == 0.0 || r.y == 1.0,
            };
            if !ok {
                return Err(PumaError::OutOfRange {
                    what: "outcome",
                    value: r.y,
                    limit: 5.0,
                });
            }
            counts[u] += 1;
        }
        if let Some(u) = counts.iter().position(|&c| c < 2) {
            return Err(PumaError::Config(format!("user {u} has fewer than 2 records")));
        }
        Ok(())
    }

    pub fn d_item(&self) -> usize {
        self.items.first().map_or(0, |it| it.embed.len())
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn embed(&self, item: u32) -> &[f64] {
        &self.items[item as usize].embed
    }

    /// Record indices grouped by user, in record order.
    pub fn records_by_user(&self) -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); self.n_users];
        for (idx, r) in self.records.iter().enumerate() {
            by_user[r.user as usize].push(idx);
        }
        by_user
    }

    /// Mean training label; used to seed the regression head's output bias.
    pub fn mean_outcome(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        indices.iter().map(|&i| self.records[i].y).sum::<f64>() / indices.len() as f64
    }

    /// Test-only window onto the generator's user latents.
    #[cfg(test)]
    pub(crate) fn user_latent(&self, u: usize) -> Option<&[f64]> {
        self.latent.as_ref().map(|l| l.users[u].as_slice())
    }
}

/// Train/validation/test record indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn part(&self, which: SplitPart) -> &[usize] {
        match which {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    /// Training record indices per user.
    pub fn train_by_user(&self, ds: &InteractionDataset) -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); ds.n_users];
        for &idx in &self.train {
            by_user[ds.records[idx].user as usize].push(idx);
        }
        by_user
    }
}

/// Per-user stratified split.
///
/// Each user's records are shuffled and cut at cumulative targets carried
/// across users, so the global split sizes stay within one record of
/// `ratio * n_records`. Every user keeps at least one training record; a user
/// too small to populate the other parts ends up train-only.
pub fn split(ds: &InteractionDataset, ratios: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(*r >= 0.0)) || !(rt > 0.0) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(PumaError::Config(format!(
            "split ratios {ratios:?} must be non-negative, train > 0, sum 1"
        )));
    }
    let mut rng = Rng::for_stage(seed, "split");
    let mut out = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let (mut exp_t, mut exp_tv) = (0.0f64, 0.0f64);
    let (mut got_t, mut got_tv) = (0usize, 0usize);
    for mut recs in ds.records_by_user() {
        if recs.is_empty() {
            continue;
        }
        rng.shuffle(&mut recs);
        let n = recs.len();
        exp_t += n as f64 * rt;
        exp_tv += n as f64 * (rt + rv);
        let n_t = ((exp_t.round() as isize - got_t as isize).max(1) as usize).min(n);
        let n_tv = ((exp_tv.round() as isize - got_tv as isize).max(n_t as isize) as usize).min(n);
        got_t += n_t;
        got_tv += n_tv;
        out.train.extend_from_slice(&recs[..n_t]);
        out.val.extend_from_slice(&recs[n_t..n_tv]);
        out.test.extend_from_slice(&recs[n_tv..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Population variance of `y` over one user's training records.
pub fn user_outcome_variance(ds: &InteractionDataset, splits: &Splits, user: usize) -> Result<f64> {
    if user >= ds.n_users {
        return Err(PumaError::MissingUser(user, "dataset"));
    }
    let ys: Vec<f64> = splits
        .train
        .iter()
        .map(|&i| ds.records[i])
        .filter(|r| r.user as usize == user)
        .map(|r| r.y)
        .collect();
    if ys.is_empty() {
        return Err(PumaError::MissingUser(user, "training split"));
    }
    Ok(population_variance(&ys))
}

pub fn population_variance(ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n
}

/// Training-label variance of every user (0 for users without training records).
pub fn all_user_variances(ds: &InteractionDataset, splits: &Splits) -> Vec<f64> {
    splits
        .train_by_user(ds)
        .iter()
        .map(|idx| population_variance(&idx.iter().map(|&i| ds.records[i].y).collect::<Vec<_>>()))
        .collect()
}

pub fn stats(ds: &InteractionDataset) -> DatasetStats {
    let n_records = ds.records.len();
    let cells = ds.n_users as f64 * ds.items.len() as f64;
    DatasetStats {
        task: ds.task,
        n_users: ds.n_users,
        n_items: ds.items.len(),
        n_records,
        records_per_user: n_records as f64 / ds.n_users as f64,
        sparsity: 1.0 - n_records as f64 / cells,
        positive_ratio: match ds.task {
            Task::Click => Some(ds.records.iter().filter(|r| r.y == 1.0).count() as f64 / n_records as f64),
            Task::Rating => None,
        },
    }
}

/// Histogram of outcome values; handy for summaries.
pub fn outcome_histogram(ds: &InteractionDataset) -> BTreeMap<i64, usize> {
    let mut h = BTreeMap::new();
    for r in &ds.records {
        *h.entry(r.y as i64).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task) -> DataConfig {
        DataConfig {
            task,
            n_users: 60,
            n_items: 200,
            mean_records_per_user: 20.0,
            ..DataConfig::default()
        }
    }

    #[test]
    fn rating_outcomes_are_clamped_integers() {
        let ds = generate_dataset(&small(Task::Rating), 1).unwrap();
        assert!(ds.records.iter().all(|r| (1.0..=5.0).contains(&r.y) && r.y.fract() == 0.0));
        ds.validate().unwrap();
        assert!(ds.records_by_user().iter().all(|r| r.len() >= 2));
    }

    #[test]
    fn click_ratio_is_calibrated() {
        let cfg = DataConfig::click();
        let ds = generate_dataset(&cfg, 4).unwrap();
        let st = stats(&ds);
        let ratio = st.positive_ratio.unwrap();
        assert!((ratio - MIND_POSITIVE_RATIO).abs() < 0.02, "ratio {ratio}");
        assert!(ds.records.iter().all(|r| r.y == 0.0 || r.y == 1.0));
    }

    #[test]
    fn record_count_concentrates() {
        let ds = generate_dataset(&DataConfig::default(), 9).unwrap();
        let n = ds.records.len() as f64;
        assert!((n - 20_000.0).abs() <= 2_000.0, "{n}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small(Task::Click), 5).unwrap();
        let b = generate_dataset(&small(Task::Click), 5).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small(Task::Click), 6).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn latents_stay_inside_generator() {
        let ds = generate_dataset(&small(Task::Rating), 2).unwrap();
        assert_eq!(ds.user_latent(0).unwrap().len(), 8);
        let ratings_mean = ds.mean_outcome(&(0..ds.records.len()).collect::<Vec<_>>());
        assert!(ratings_mean > 2.0 && ratings_mean < 4.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(Task::Rating);
        cfg.n_users = 0;
        assert!(generate_dataset(&cfg, 0).is_err());
        let mut cfg = small(Task::Click);
        cfg.click_bias = ClickBias::Calibrate { positive_ratio: 1.5 };
        assert!(generate_dataset(&cfg, 0).is_err());
    }

    #[test]
    fn split_all_train() {
        let ds = generate_dataset(&small(Task::Rating), 3).unwrap();
        let s = split(&ds, (1.0, 0.0, 0.0), 0).unwrap();
        assert_eq!(s.train.len(), ds.records.len());
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_is_partition_with_every_user_in_train() {
        let ds = generate_dataset(&small(Task::Rating), 3).unwrap();
        let s = split(&ds, (0.8, 0.1, 0.1), 11).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.records.len()).collect::<Vec<_>>());
        assert!(s.train_by_user(&ds).iter().all(|v| !v.is_empty()));
    }

    #[test]
    fn split_sizes_track_ratios() {
        let cfg = DataConfig {
            n_users: 250,
            ..DataConfig::default()
        };
        let ds = generate_dataset(&cfg, 8).unwrap();
        let n = ds.records.len() as f64;
        let s = split(&ds, (0.8, 0.1, 0.1), 1).unwrap();
        assert!((s.train.len() as f64 - 0.8 * n).abs() <= 0.01 * n);
        assert!((s.val.len() as f64 - 0.1 * n).abs() <= 0.01 * n);
        assert!((s.test.len() as f64 - 0.1 * n).abs() <= 0.01 * n);
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let ds = generate_dataset(&small(Task::Rating), 3).unwrap();
        assert!(split(&ds, (0.5, 0.1, 0.1), 0).is_err());
        assert!(split(&ds, (0.0, 0.5, 0.5), 0).is_err());
    }

    fn hand_dataset(ys: &[(u32, f64)]) -> (InteractionDataset, Splits) {
        let items = vec![Item { id: 0, embed: vec![0.0] }, Item { id: 1, embed: vec![1.0] }];
        let records: Vec<Record> = ys.iter().map(|&(user, y)| Record { user, item: 0, y }).collect();
        let n_users = ys.iter().map(|r| r.0).max().unwrap() as usize + 1;
        let ds = InteractionDataset {
            task: Task::Rating,
            n_users,
            items,
            records,
            click_bias: None,
            latent: None,
        };
        let splits = Splits {
            train: (0..ys.len()).collect(),
            val: vec![],
            test: vec![],
        };
        (ds, splits)
    }

    #[test]
    fn outcome_variance_examples() {
        let (ds, s) = hand_dataset(&[(0, 5.0), (0, 5.0), (0, 5.0), (1, 1.0), (1, 5.0), (2, 3.0)]);
        assert_eq!(user_outcome_variance(&ds, &s, 0).unwrap(), 0.0);
        assert_eq!(user_outcome_variance(&ds, &s, 1).unwrap(), 4.0);
        assert_eq!(user_outcome_variance(&ds, &s, 2).unwrap(), 0.0);
        assert!(user_outcome_variance(&ds, &s, 7).is_err());
        assert_eq!(all_user_variances(&ds, &s), vec![0.0, 4.0, 0.0]);
    }

    #[test]
    fn stats_examples() {
        let mut records = Vec::new();
        for u in 0..500u32 {
            for k in 0..40u32 {
                records.push(Record {
                    user: u,
                    item: (u * 7 + k) % 1000,
                    y: 3.0,
                });
            }
        }
        let items = (0..1000).map(|id| Item { id, embed: vec![0.0] }).collect();
        let ds = InteractionDataset::from_parts(Task::Rating, 500, items, records).unwrap();
        let st = stats(&ds);
        assert!((st.sparsity - 0.96).abs() < 1e-12);
        assert_eq!(st.records_per_user, 40.0);
        assert!(st.positive_ratio.is_none());
    }
}
