use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{BatchMetrics, Score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One line of `metrics.csv`.
///
/// Train rows hold meta-batch means, val and test rows hold means over the
/// evaluation episodes. A train row with non-finite losses and no
/// accuracies marks the step at which a seed was aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub split: Split,
    pub pre_update_loss: f64,
    pub post_update_loss: f64,
    pub pre_update_acc: Option<f64>,
    pub post_update_acc: Option<f64>,
    pub seed: u64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn new(step: usize, split: Split, m: BatchMetrics, seed: u64, wall_ms: u64) -> Self {
        MetricsRow {
            step,
            split,
            pre_update_loss: m.pre.loss,
            post_update_loss: m.post.loss,
            pre_update_acc: m.pre.acc,
            post_update_acc: m.post.acc,
            seed,
            wall_ms,
        }
    }

    pub fn failure(step: usize, seed: u64, wall_ms: u64) -> Self {
        MetricsRow {
            step,
            split: Split::Train,
            pre_update_loss: f64::NAN,
            post_update_loss: f64::NAN,
            pre_update_acc: None,
            post_update_acc: None,
            seed,
            wall_ms,
        }
    }

    pub fn is_failure(&self) -> bool {
        !self.post_update_loss.is_finite()
    }

    pub fn pre(&self) -> Score {
        Score {
            loss: self.pre_update_loss,
            acc: self.pre_update_acc,
        }
    }

    pub fn post(&self) -> Score {
        Score {
            loss: self.post_update_loss,
            acc: self.post_update_acc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for acc in [self.pre_update_acc, self.post_update_acc]
            .into_iter()
            .flatten()
        {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Report(format!(
                    "step {} seed {}: accuracy {acc} outside [0, 1]",
                    self.step, self.seed
                )));
            }
        }
        Ok(())
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(Error::Report(format!("missing {}", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let rows: Vec<MetricsRow> = read_csv(path)?;
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

/// Query scores of one test episode after each adaptation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: usize,
    pub eval_step: usize,
    pub loss: f64,
    pub acc: Option<f64>,
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}
