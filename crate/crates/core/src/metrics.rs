//! Rating and click metrics, and the retrain-vs-migrate gain ratio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{PumaError, Result};

fn check_pairs(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(PumaError::UndefinedMetric("empty input".into()));
    }
    if pred.len() != truth.len() {
        return Err(PumaError::dims("metric inputs", pred.len(), truth.len()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pairs(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mann-Whitney AUC: `(wins + 0.5 ties) / (P N)` over positive-negative pairs.
///
/// Computed from midranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pairs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PumaError::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group i..=j
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] > 0.5 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

/// Per-user AUC averaged without weights over users with both classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UaucResult {
    pub uauc: f64,
    pub eligible_users: usize,
    pub excluded_users: usize,
    pub per_user: BTreeMap<usize, f64>,
}

pub fn uauc(scores: &[f64], labels: &[f64], user_of: &[usize]) -> Result<UaucResult> {
    check_pairs(scores, labels)?;
    if user_of.len() != scores.len() {
        return Err(PumaError::dims("uauc user ids", user_of.len(), scores.len()));
    }
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((&s, &y), &u) in scores.iter().zip(labels).zip(user_of) {
        let g = groups.entry(u).or_default();
        g.0.push(s);
        g.1.push(y);
    }
    let mut per_user = BTreeMap::new();
    let mut excluded = 0;
    for (u, (s, y)) in &groups {
        match auc(s, y) {
            Ok(a) => {
                per_user.insert(*u, a);
            }
            Err(_) => excluded += 1,
        }
    }
    if per_user.is_empty() {
        return Err(PumaError::UndefinedMetric("no user has both classes".into()));
    }
    Ok(UaucResult {
        uauc: per_user.values().sum::<f64>() / per_user.len() as f64,
        eligible_users: per_user.len(),
        excluded_users: excluded,
        per_user,
    })
}

/// `retrained_rmse / migrated_rmse`; above one means migration beat retraining.
pub fn gain_ratio(retrained_rmse: f64, migrated_rmse: f64) -> Result<f64> {
    if !(retrained_rmse > 0.0) || !(migrated_rmse > 0.0) {
        return Err(PumaError::OutOfRange {
            what: "gain ratio input",
            value: retrained_rmse.min(migrated_rmse),
            limit: 0.0,
        });
    }
    Ok(retrained_rmse / migrated_rmse)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetric {
    pub user: usize,
    pub n: usize,
    pub value: f64,
}

/// Evaluation summary. Rating reports carry RMSE/MAE, click reports AUC/uAUC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub n_eval: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub auc: Option<f64>,
    pub uauc: Option<f64>,
    /// Users left out of uAUC because their records hold a single class.
    pub uauc_excluded_users: Option<usize>,
    /// RMSE of the softmax expectation over rating classes; logged, not the headline.
    pub rmse_class_expectation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_user: Option<Vec<UserMetric>>,
}

/// Column order of [`MetricsReport::csv_row`].
pub const CSV_HEADER: &str = "task,n_eval,rmse,mae,auc,uauc,uauc_excluded_users";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn rating(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(MetricsReport {
            task: Task::Rating,
            n_eval: pred.len(),
            rmse: Some(rmse(pred, truth)?),
            mae: Some(mae(pred, truth)?),
            auc: None,
            uauc: None,
            uauc_excluded_users: None,
            rmse_class_expectation: None,
            per_user: None,
        })
    }

    pub fn click(scores: &[f64], labels: &[f64], user_of: &[usize]) -> Result<Self> {
        let u = uauc(scores, labels, user_of)?;
        Ok(MetricsReport {
            task: Task::Click,
            n_eval: scores.len(),
            rmse: None,
            mae: None,
            auc: Some(auc(scores, labels)?),
            uauc: Some(u.uauc),
            uauc_excluded_users: Some(u.excluded_users),
            rmse_class_expectation: None,
            per_user: None,
        })
    }

    /// Headline value: RMSE for ratings (lower is better), AUC for clicks.
    pub fn headline(&self) -> f64 {
        match self.task {
            Task::Rating => self.rmse.unwrap_or(f64::NAN),
            Task::Click => self.auc.unwrap_or(f64::NAN),
        }
    }

    /// One CSV line in [`CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.task.name(),
            self.n_eval,
            opt(self.rmse),
            opt(self.mae),
            opt(self.auc),
            opt(self.uauc),
            self.uauc_excluded_users.map(|v| v.to_string()).unwrap_or_default()
        )
    }
}
