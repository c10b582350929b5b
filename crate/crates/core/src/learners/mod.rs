//! Meta-learners: MAML (second and first order), conditional neural
//! processes, prototypical networks and a joint-training baseline.

mod adam;
mod cnp;
mod joint;
mod maml;
mod protonet;

pub use adam::Adam;
pub use cnp::{cnp_forward, Cnp, CnpConfig};
pub use joint::{joint_baseline_fit, pooled_batch, JointBaseline, JointConfig};
pub use maml::{
    adaptation_curve, inner_adapt_with, maml_inner_adapt, maml_outer_step, Maml, MamlConfig,
};
pub use protonet::{protonet_forward, ProtoNet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::tasks::{Episode, Targets};
use crate::tensor::Tensor;

/// Query loss and, for classification, accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub loss: f64,
    pub acc: Option<f64>,
}

impl Score {
    pub fn of(pred: &Tensor, y: &Targets) -> Result<Score> {
        let _guard = crate::tensor::no_record();
        Ok(Score {
            loss: episode_loss(pred, y)?.item(),
            acc: accuracy(pred, y),
        })
    }

    /// Elementwise mean; accuracy is present only if present in every score.
    pub fn mean(scores: &[Score]) -> Score {
        let n = scores.len().max(1) as f64;
        let loss = scores.iter().map(|s| s.loss).sum::<f64>() / n;
        let acc = scores
            .iter()
            .map(|s| s.acc)
            .sum::<Option<f64>>()
            .map(|a| a / n);
        Score { loss, acc }
    }
}

/// Mean pre- and post-adaptation query scores over a meta-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub pre: Score,
    pub post: Score,
}

/// Query scores after 0, 1, ... adaptation steps on one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEval {
    pub curve: Vec<Score>,
}

impl EpisodeEval {
    pub fn pre(&self) -> Score {
        self.curve[0]
    }

    pub fn post(&self) -> Score {
        *self.curve.last().expect("non-empty curve")
    }
}

/// Common interface the harness trains and evaluates through.
pub trait MetaLearner {
    fn name(&self) -> &'static str;
    fn params(&self) -> &ParamSet;
    /// Replaces the parameters (same names and shapes) without touching
    /// optimizer state.
    fn load_params(&mut self, params: ParamSet) -> Result<()>;
    fn train_step(&mut self, episodes: &[Episode]) -> Result<BatchMetrics>;
    fn evaluate(&self, ep: &Episode) -> Result<EpisodeEval>;
}

/// Mean squared error for regression, mean softmax cross-entropy for
/// classification.
pub fn episode_loss(pred: &Tensor, y: &Targets) -> Result<Tensor> {
    match y {
        Targets::Values(v) => pred.mse(v),
        Targets::Classes(c) => pred.softmax_cross_entropy(c),
    }
}

/// Fraction of rows whose argmax (first on ties) equals the label.
pub fn accuracy(pred: &Tensor, y: &Targets) -> Option<f64> {
    let labels = y.classes()?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax(pred.row(r)) == l)
        .count();
    Some(correct as f64 / labels.len().max(1) as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One-hot rows for class labels, or the values themselves for regression.
pub fn encode_targets(y: &Targets, n_way: Option<usize>) -> Result<Tensor> {
    match y {
        Targets::Values(v) => Ok(v.clone()),
        Targets::Classes(c) => {
            let n = n_way.ok_or_else(|| Error::invalid("encode_targets", "missing n_way"))?;
            let mut data = vec![0.0; c.len() * n];
            for (r, &l) in c.iter().enumerate() {
                if l >= n {
                    return Err(Error::invalid(
                        "encode_targets",
                        format!("label {l} outside 0..{n}"),
                    ));
                }
                data[r * n + l] = 1.0;
            }
            Tensor::new(vec![c.len(), n], data)
        }
    }
}

fn mean_loss(losses: Vec<Tensor>) -> Result<Tensor> {
    let n = losses.len();
    let mut it = losses.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::invalid("train_step", "empty meta-batch"))?;
    it.try_fold(first, |acc, l| acc.add(&l))?
        .scale(1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_argmax() {
        let pred = Tensor::from_rows(&[vec![0.1, 0.9], vec![0.8, 0.2], vec![0.5, 0.5]]).unwrap();
        let acc = accuracy(&pred, &Targets::Classes(vec![1, 1, 0])).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            accuracy(&pred, &Targets::Values(Tensor::column(&[0.0; 3]))),
            None
        );
    }

    #[test]
    fn score_mean_drops_missing_accuracy() {
        let a = Score {
            loss: 1.0,
            acc: Some(0.5),
        };
        let b = Score {
            loss: 3.0,
            acc: Some(1.0),
        };
        assert_eq!(
            Score::mean(&[a, b]),
            Score {
                loss: 2.0,
                acc: Some(0.75)
            }
        );
        let c = Score {
            loss: 3.0,
            acc: None,
        };
        assert_eq!(Score::mean(&[a, c]).acc, None);
    }

    #[test]
    fn one_hot_encoding() {
        let t = encode_targets(&Targets::Classes(vec![2, 0]), Some(3)).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(encode_targets(&Targets::Classes(vec![3]), Some(3)).is_err());
    }
}
