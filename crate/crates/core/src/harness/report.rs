use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsRow, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Diagnosis {
    Memorization,
    LearnerOverfit,
    Healthy,
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::Memorization => "MEMORIZATION",
            Diagnosis::LearnerOverfit => "LEARNER-OVERFIT",
            Diagnosis::Healthy => "HEALTHY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportThresholds {
    /// Train pre/post gap at or below which adaptation counts as unused.
    pub delta: f64,
    /// Gap above which adaptation counts as used, and the train/val gap
    /// above which the learner counts as not generalising.
    pub gap: f64,
    /// Number of trailing validation points averaged.
    pub window: usize,
    pub min_eval_points: usize,
}

impl Default for ReportThresholds {
    fn default() -> Self {
        ReportThresholds {
            delta: 0.05,
            gap: 0.15,
            window: 5,
            min_eval_points: 10,
        }
    }
}

/// Final-window averages behind a diagnosis.
///
/// For classification the gaps are accuracy differences. For regression
/// they are relative loss differences: the fraction of the train pre-update
/// loss removed by adaptation, and the fraction of the val post-update loss
/// not reached on train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub diagnosis: Diagnosis,
    pub train_pre: f64,
    pub train_post: f64,
    pub val_post: f64,
    pub adaptation_gap: f64,
    pub generalization_gap: f64,
    pub uses_accuracy: bool,
}

impl fmt::Display for MemorizationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = if self.uses_accuracy { "acc" } else { "loss" };
        write!(
            f,
            "{} (train pre {what} {:.4}, train post {what} {:.4}, val post {what} {:.4}, adaptation gap {:.4}, generalization gap {:.4})",
            self.diagnosis, self.train_pre, self.train_post, self.val_post, self.adaptation_gap, self.generalization_gap
        )
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Classifies a training trace as memorization, learner overfitting or
/// healthy from its final window: the last `window` validation points and
/// the train rows logged since the first of them.
///
/// Rows must come from one seed. Test and failure rows are ignored.
pub fn memorization_report(
    rows: &[MetricsRow],
    th: &ReportThresholds,
) -> Result<MemorizationReport> {
    if let Some(r) = rows.iter().find(|r| r.seed != rows[0].seed) {
        return Err(Error::Report(format!(
            "rows mix seeds {} and {}; report one seed at a time",
            rows[0].seed, r.seed
        )));
    }
    let val: Vec<&MetricsRow> = rows
        .iter()
        .filter(|r| r.split == Split::Val && !r.is_failure())
        .collect();
    if val.len() < th.min_eval_points.max(1) {
        return Err(Error::Report(format!(
            "need at least {} evaluation points, found {}",
            th.min_eval_points.max(1),
            val.len()
        )));
    }
    let window = &val[val.len() - th.window.clamp(1, val.len())..];
    let from = window[0].step;
    let train: Vec<&MetricsRow> = rows
        .iter()
        .filter(|r| r.split == Split::Train && !r.is_failure() && r.step >= from)
        .collect();
    if train.is_empty() {
        return Err(Error::Report(format!(
            "no train rows at or after step {from}"
        )));
    }
    let uses_accuracy = train
        .iter()
        .chain(window)
        .all(|r| r.pre_update_acc.is_some() && r.post_update_acc.is_some());
    let (train_pre, train_post, val_post, adaptation_gap, generalization_gap) = if uses_accuracy {
        let tp = mean(
            &train
                .iter()
                .map(|r| r.pre_update_acc.unwrap())
                .collect::<Vec<_>>(),
        );
        let tq = mean(
            &train
                .iter()
                .map(|r| r.post_update_acc.unwrap())
                .collect::<Vec<_>>(),
        );
        let vq = mean(
            &window
                .iter()
                .map(|r| r.post_update_acc.unwrap())
                .collect::<Vec<_>>(),
        );
        (tp, tq, vq, tq - tp, tq - vq)
    } else {
        let tp = mean(&train.iter().map(|r| r.pre_update_loss).collect::<Vec<_>>());
        let tq = mean(&train.iter().map(|r| r.post_update_loss).collect::<Vec<_>>());
        let vq = mean(
            &window
                .iter()
                .map(|r| r.post_update_loss)
                .collect::<Vec<_>>(),
        );
        let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        (tp, tq, vq, rel(tp - tq, tp), rel(vq - tq, vq))
    };
    let diagnosis = if generalization_gap <= th.gap {
        Diagnosis::Healthy
    } else if adaptation_gap.abs() <= th.delta {
        Diagnosis::Memorization
    } else if adaptation_gap > th.gap {
        Diagnosis::LearnerOverfit
    } else {
        Diagnosis::Healthy
    };
    Ok(MemorizationReport {
        diagnosis,
        train_pre,
        train_post,
        val_post,
        adaptation_gap,
        generalization_gap,
        uses_accuracy,
    })
}

/// One report per seed, in order of first appearance.
pub fn report_by_seed(
    rows: &[MetricsRow],
    th: &ReportThresholds,
) -> Vec<(u64, Result<MemorizationReport>)> {
    let mut seeds: Vec<u64> = Vec::new();
    for r in rows {
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    seeds
        .into_iter()
        .map(|s| {
            let own: Vec<MetricsRow> = rows.iter().filter(|r| r.seed == s).cloned().collect();
            (s, memorization_report(&own, th))
        })
        .collect()
}

/// A synthetic trace: flat train pre/post accuracies and val accuracies,
/// `points` evaluations `every` steps apart.
pub fn constant_trace(
    train_pre: f64,
    train_post: f64,
    val_post: f64,
    points: usize,
    every: usize,
) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for e in 0..points {
        if e > 0 {
            for step in (e - 1) * every + 1..=e * every {
                rows.push(MetricsRow {
                    step,
                    split: Split::Train,
                    pre_update_loss: 1.0 - train_pre,
                    post_update_loss: 1.0 - train_post,
                    pre_update_acc: Some(train_pre),
                    post_update_acc: Some(train_post),
                    seed: 0,
                    wall_ms: 0,
                });
            }
        }
        rows.push(MetricsRow {
            step: e * every,
            split: Split::Val,
            pre_update_loss: 1.0 - train_pre,
            post_update_loss: 1.0 - val_post,
            pre_update_acc: Some(train_pre),
            post_update_acc: Some(val_post),
            seed: 0,
            wall_ms: 0,
        });
    }
    rows
}
