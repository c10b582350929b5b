use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{episode_loss, Adam, BatchMetrics, EpisodeEval, MetaLearner, Score};
use crate::error::{Error, Result};
use crate::models::{self, MlpSpec, ParamSet};
use crate::tasks::{Episode, SinusoidFamily, Targets};
use crate::tensor::{grad, no_record, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            steps: 5000,
            batch_size: 250,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// `n` points cycling through the family's intervals, labelled by each
/// interval's fixed task.
pub fn pooled_batch<R: Rng + ?Sized>(
    fam: &SinusoidFamily,
    n: usize,
    rng: &mut R,
) -> (Tensor, Tensor) {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for j in 0..n {
        let i = j % fam.intervals.len();
        let (lo, hi) = fam.intervals[i];
        let x = Uniform::new_inclusive(lo, hi)
            .expect("interval")
            .sample(rng);
        xs.push(x);
        ys.push(fam.assignments[i].eval(x));
    }
    (Tensor::column(&xs), Tensor::column(&ys))
}

/// Plain supervised regression on pooled data from every task of the family.
pub fn joint_baseline_fit(
    fam: &SinusoidFamily,
    spec: &MlpSpec,
    cfg: &JointConfig,
) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = models::init(spec)?;
    let mut adam = Adam::new(cfg.lr);
    for step in 0..cfg.steps {
        let (x, y) = pooled_batch(fam, cfg.batch_size, &mut rng);
        let tape = Tape::new();
        let theta = params.watch(&tape);
        let loss = models::forward(&theta, spec, &x)?.mse(&y)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let g = grad(&loss, theta.tensors(), false)?;
        drop(tape);
        params = adam.step(&params, &g.values, 0.0)?;
    }
    Ok(params)
}

fn pool(episodes: &[Episode]) -> Result<(Tensor, Targets)> {
    let xs: Vec<&Tensor> = episodes.iter().flat_map(|e| [&e.x_s, &e.x_q]).collect();
    let x = Tensor::concat(&xs, 0)?;
    let y = if episodes.iter().all(Episode::is_classification) {
        Targets::Classes(
            episodes
                .iter()
                .flat_map(|e| [&e.y_s, &e.y_q])
                .flat_map(|t| t.classes().expect("classification").to_vec())
                .collect(),
        )
    } else {
        let ys: Vec<&Tensor> = episodes
            .iter()
            .flat_map(|e| [&e.y_s, &e.y_q])
            .map(|t| {
                t.values()
                    .ok_or_else(|| Error::invalid("joint", "mixed episode kinds"))
            })
            .collect::<Result<_>>()?;
        Targets::Values(Tensor::concat(&ys, 0)?)
    };
    Ok((x, y))
}

/// One model fit to the union of every episode's support and query pairs.
/// Evaluation applies no adaptation; its curve is flat.
#[derive(Debug, Clone)]
pub struct JointBaseline {
    pub spec: MlpSpec,
    pub eval_steps: usize,
    params: ParamSet,
    adam: Adam,
}

impl JointBaseline {
    pub fn new(spec: MlpSpec, lr: f64, eval_steps: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("outer_lr must be > 0, got {lr}")));
        }
        let params = models::init(&spec)?;
        Ok(JointBaseline {
            spec,
            eval_steps,
            params,
            adam: Adam::new(lr),
        })
    }
}

impl MetaLearner for JointBaseline {
    fn name(&self) -> &'static str {
        "joint"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn load_params(&mut self, params: ParamSet) -> Result<()> {
        self.params = self.params.with_tensors(params.tensors().to_vec())?;
        Ok(())
    }

    fn train_step(&mut self, episodes: &[Episode]) -> Result<BatchMetrics> {
        let (x, y) = pool(episodes)?;
        let tape = Tape::new();
        let theta = self.params.watch(&tape);
        let pred = models::forward(&theta, &self.spec, &x)?;
        let loss = episode_loss(&pred, &y)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step: 0 });
        }
        let s = Score::of(&pred, &y)?;
        let g = grad(&loss, theta.tensors(), false)?;
        drop(tape);
        self.params = self.adam.step(&self.params, &g.values, 0.0)?;
        Ok(BatchMetrics { pre: s, post: s })
    }

    fn evaluate(&self, ep: &Episode) -> Result<EpisodeEval> {
        let _pause = no_record();
        let pred = models::forward(&self.params, &self.spec, &ep.x_q)?;
        let s = Score::of(&pred, &ep.y_q)?;
        Ok(EpisodeEval {
            curve: vec![s; self.eval_steps + 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Activation;

    #[test]
    fn pooled_data_covers_all_intervals() {
        let fam = SinusoidFamily::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = pooled_batch(&fam, 30, &mut rng);
        let mut seen = [0usize; 10];
        for (xv, yv) in x.data().iter().zip(y.data()) {
            let i = fam.interval_of(*xv).unwrap();
            seen[i] += 1;
            assert_eq!(fam.eval(*xv), Some(*yv));
        }
        assert!(seen.iter().all(|&c| c == 3));
    }

    #[test]
    fn fit_reduces_pooled_loss() {
        let fam = SinusoidFamily::new(0);
        let spec = MlpSpec::new(vec![1, 40, 40, 1], Activation::Relu, 0).unwrap();
        let cfg = JointConfig {
            steps: 300,
            batch_size: 100,
            lr: 3e-3,
            seed: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = pooled_batch(&fam, 500, &mut rng);
        let before = models::forward(&models::init(&spec).unwrap(), &spec, &x)
            .unwrap()
            .mse(&y)
            .unwrap();
        let fitted = joint_baseline_fit(&fam, &spec, &cfg).unwrap();
        let after = models::forward(&fitted, &spec, &x)
            .unwrap()
            .mse(&y)
            .unwrap();
        assert!(
            after.item() < 0.5 * before.item(),
            "{} -> {}",
            before.item(),
            after.item()
        );
    }

    #[test]
    fn evaluation_is_unadapted() {
        let fam = SinusoidFamily::new(0);
        let spec = MlpSpec::new(vec![1, 8, 1], Activation::Relu, 0).unwrap();
        let joint = JointBaseline::new(spec.clone(), 1e-3, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ep = fam.sample_novel_episode(10, 10, &mut rng).unwrap();
        let eval = joint.evaluate(&ep).unwrap();
        assert_eq!(eval.curve.len(), 11);
        let plain = Score::of(
            &models::forward(joint.params(), &spec, &ep.x_q).unwrap(),
            &ep.y_q,
        )
        .unwrap();
        assert_eq!(eval.post(), plain);
        assert_eq!(eval.pre(), eval.post());
    }
}
