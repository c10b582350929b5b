use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{
    ensure_dir, read_csv, read_metrics, write_csv, EpisodeRow, MetricsRow, Split,
};
use super::run::{METRICS, TEST_EPISODES};
use crate::error::{Error, Result};

pub const PLOT_DIR: &str = "plots";
pub const LEARNING_CURVE: &str = "learning_curve.csv";
pub const ADAPTATION_CURVE: &str = "adaptation_curve.csv";

/// Training progress at one validation point. Train columns average the
/// train rows logged since the previous validation point and are empty at
/// step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub seed: u64,
    pub step: usize,
    pub train_pre_loss: Option<f64>,
    pub train_post_loss: Option<f64>,
    pub train_pre_acc: Option<f64>,
    pub train_post_acc: Option<f64>,
    pub val_pre_loss: f64,
    pub val_post_loss: f64,
    pub val_pre_acc: Option<f64>,
    pub val_post_acc: Option<f64>,
}

/// Mean test query score after `eval_step` adaptation steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPoint {
    pub seed: u64,
    pub eval_step: usize,
    pub loss: f64,
    pub acc: Option<f64>,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub learning: Vec<LearningPoint>,
    pub adaptation: Vec<AdaptationPoint>,
    pub learning_path: PathBuf,
    pub adaptation_path: PathBuf,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_opt<'a>(rows: &[&'a MetricsRow], f: impl Fn(&'a MetricsRow) -> Option<f64>) -> Option<f64> {
    let v: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
    v.and_then(|v| mean(v.into_iter()))
}

pub fn learning_curve(rows: &[MetricsRow]) -> Vec<LearningPoint> {
    let mut by_seed: BTreeMap<u64, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_failure()) {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let mut out = Vec::new();
    for (seed, rs) in by_seed {
        let mut prev = None;
        for v in rs.iter().filter(|r| r.split == Split::Val) {
            let train: Vec<&MetricsRow> = rs
                .iter()
                .copied()
                .filter(|r| {
                    r.split == Split::Train && r.step <= v.step && prev.is_none_or(|p| r.step > p)
                })
                .collect();
            out.push(LearningPoint {
                seed,
                step: v.step,
                train_pre_loss: mean(train.iter().map(|r| r.pre_update_loss)),
                train_post_loss: mean(train.iter().map(|r| r.post_update_loss)),
                train_pre_acc: mean_opt(&train, |r| r.pre_update_acc),
                train_post_acc: mean_opt(&train, |r| r.post_update_acc),
                val_pre_loss: v.pre_update_loss,
                val_post_loss: v.post_update_loss,
                val_pre_acc: v.pre_update_acc,
                val_post_acc: v.post_update_acc,
            });
            prev = Some(v.step);
        }
    }
    out
}

pub fn adaptation_curve(rows: &[EpisodeRow]) -> Vec<AdaptationPoint> {
    let mut groups: BTreeMap<(u64, usize), Vec<&EpisodeRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.seed, r.eval_step)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((seed, eval_step), rs)| {
            let acc: Option<Vec<f64>> = rs.iter().map(|r| r.acc).collect();
            AdaptationPoint {
                seed,
                eval_step,
                loss: rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64,
                acc: acc.map(|a| a.iter().sum::<f64>() / a.len() as f64),
                episodes: rs.len(),
            }
        })
        .collect()
}

/// Writes `plots/learning_curve.csv` and `plots/adaptation_curve.csv` for a
/// finished run and returns their contents.
pub fn emit_plot_data(run_dir: &Path) -> Result<PlotData> {
    let rows = read_metrics(&run_dir.join(METRICS))?;
    let episodes: Vec<EpisodeRow> = read_csv(&run_dir.join(TEST_EPISODES))?;
    if !rows.iter().any(|r| r.split == Split::Val) {
        return Err(Error::Report(format!(
            "{}: no validation rows",
            run_dir.display()
        )));
    }
    let learning = learning_curve(&rows);
    let adaptation = adaptation_curve(&episodes);
    let dir = run_dir.join(PLOT_DIR);
    ensure_dir(&dir)?;
    let learning_path = dir.join(LEARNING_CURVE);
    let adaptation_path = dir.join(ADAPTATION_CURVE);
    write_csv(&learning_path, &learning)?;
    write_csv(&adaptation_path, &adaptation)?;
    Ok(PlotData {
        learning,
        adaptation,
        learning_path,
        adaptation_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::report::constant_trace;

    #[test]
    fn learning_points_average_preceding_train_rows() {
        let mut rows = constant_trace(0.2, 0.6, 0.5, 3, 4);
        rows[1].post_update_acc = Some(1.0);
        let pts = learning_curve(&rows);
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0].train_post_acc, None);
        assert!((pts[1].train_post_acc.unwrap() - 0.7).abs() < 1e-12);
        assert!((pts[2].train_post_acc.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(pts[2].val_post_acc, Some(0.5));
    }

    #[test]
    fn adaptation_points_group_by_seed_and_step() {
        let rows: Vec<EpisodeRow> = (0..2)
            .flat_map(|ep| {
                (0..3).map(move |j| EpisodeRow {
                    seed: 4,
                    episode: ep,
                    eval_step: j,
                    loss: (ep + j) as f64,
                    acc: None,
                })
            })
            .collect();
        let pts = adaptation_curve(&rows);
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1].loss, 1.5);
        assert_eq!(pts[1].episodes, 2);
    }

    #[test]
    fn missing_metrics_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(dir.path()).is_err());
    }
}
