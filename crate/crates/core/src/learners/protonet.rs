use std::cmp::Ordering;

use super::{episode_loss, mean_loss, Adam, BatchMetrics, EpisodeEval, MetaLearner, Score};
use crate::error::{Error, Result};
use crate::models::{self, MlpSpec, ParamSet};
use crate::tasks::Episode;
use crate::tensor::{grad, no_record, Tape, Tensor};

/// Prototypes (indexed by label) and query logits `[q, n_way]`.
#[derive(Debug, Clone)]
pub struct ProtoOutput {
    pub prototypes: Vec<Tensor>,
    pub logits: Tensor,
}

fn cmp_rows(a: &[&[f64]], b: &[&[f64]]) -> Ordering {
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb.iter()) {
            match x.total_cmp(y) {
                Ordering::Equal => {}
                o => return o,
            }
        }
    }
    a.len().cmp(&b.len())
}

/// Logits are negative squared distances from each query embedding to each
/// class prototype (the mean support embedding of that class).
///
/// Classes are processed in an order fixed by their support contents, not by
/// their label numbers, so renaming labels permutes the logit columns and
/// changes nothing else, bit for bit.
pub fn protonet_forward(spec: &MlpSpec, params: &ParamSet, ep: &Episode) -> Result<ProtoOutput> {
    let (labels, n) = match (ep.y_s.classes(), ep.n_way()) {
        (Some(l), Some(n)) => (l, n),
        _ => {
            return Err(Error::invalid(
                "protonet_forward",
                "needs a classification episode",
            ))
        }
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (row, &l) in labels.iter().enumerate() {
        members
            .get_mut(l)
            .ok_or_else(|| Error::invalid("protonet_forward", format!("label {l} >= n_way {n}")))?
            .push(row);
    }
    if let Some(missing) = members.iter().position(Vec::is_empty) {
        return Err(Error::invalid(
            "protonet_forward",
            format!("label {missing} has no support examples"),
        ));
    }
    let keys: Vec<Vec<&[f64]>> = members
        .iter()
        .map(|rows| {
            let mut k: Vec<&[f64]> = rows.iter().map(|&r| ep.x_s.row(r)).collect();
            k.sort_by(|a, b| cmp_rows(&[*a], &[*b]));
            k
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp_rows(&keys[a], &keys[b]).then(a.cmp(&b)));

    let e_s = models::forward(params, spec, &ep.x_s)?;
    let e_q = models::forward(params, spec, &ep.x_q)?;
    let d = spec.output_dim();
    let q = ep.x_q.rows();
    let mut prototypes = vec![Tensor::scalar(0.0); n];
    let mut dists = Vec::with_capacity(n);
    for &label in &order {
        let proto = e_s.gather(&members[label])?.mean_to(&[1, d])?;
        let diff = e_q.sub(&proto.broadcast_to(&[q, d])?)?;
        dists.push(diff.square()?.sum_to(&[q, 1])?);
        prototypes[label] = proto;
    }
    let canonical = Tensor::concat(&dists.iter().collect::<Vec<_>>(), 1)?.neg()?;
    let mut perm = vec![0.0; n * n];
    for (i, &label) in order.iter().enumerate() {
        perm[i * n + label] = 1.0;
    }
    let logits = canonical.matmul(&Tensor::new(vec![n, n], perm)?)?;
    Ok(ProtoOutput { prototypes, logits })
}

/// Prototypical network over an MLP embedding.
#[derive(Debug, Clone)]
pub struct ProtoNet {
    pub spec: MlpSpec,
    pub eval_steps: usize,
    params: ParamSet,
    adam: Adam,
}

impl ProtoNet {
    pub fn new(spec: MlpSpec, outer_lr: f64, eval_steps: usize) -> Result<Self> {
        if !(outer_lr > 0.0 && outer_lr.is_finite()) {
            return Err(Error::Config(format!(
                "outer_lr must be > 0, got {outer_lr}"
            )));
        }
        let params = models::init(&spec)?;
        Ok(ProtoNet {
            spec,
            eval_steps,
            params,
            adam: Adam::new(outer_lr),
        })
    }
}

impl MetaLearner for ProtoNet {
    fn name(&self) -> &'static str {
        "protonet"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn load_params(&mut self, params: ParamSet) -> Result<()> {
        self.params = self.params.with_tensors(params.tensors().to_vec())?;
        Ok(())
    }

    fn train_step(&mut self, episodes: &[Episode]) -> Result<BatchMetrics> {
        let tape = Tape::new();
        let theta = self.params.watch(&tape);
        let mut losses = Vec::new();
        let mut scores = Vec::new();
        for ep in episodes {
            let out = protonet_forward(&self.spec, &theta, ep)?;
            let loss = episode_loss(&out.logits, &ep.y_q)?;
            if !loss.item().is_finite() {
                return Err(Error::NonFiniteLoss { step: 0 });
            }
            scores.push(Score::of(&out.logits, &ep.y_q)?);
            losses.push(loss);
        }
        let g = grad(&mean_loss(losses)?, theta.tensors(), false)?;
        drop(tape);
        self.params = self.adam.step(&self.params, &g.values, 0.0)?;
        let s = Score::mean(&scores);
        Ok(BatchMetrics { pre: s, post: s })
    }

    fn evaluate(&self, ep: &Episode) -> Result<EpisodeEval> {
        let _pause = no_record();
        let out = protonet_forward(&self.spec, &self.params, ep)?;
        let s = Score::of(&out.logits, &ep.y_q)?;
        Ok(EpisodeEval {
            curve: vec![s; self.eval_steps + 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::augment::{AugKey, Augmentation, AugmentationKind};
    use crate::models::Activation;
    use crate::tasks::{
        generate_synthetic_pool, sample_classification_episode, SamplerMode, SyntheticPoolConfig,
        Targets, TaskMeta,
    };

    fn spec() -> MlpSpec {
        MlpSpec::new(vec![16, 32, 8], Activation::Relu, 2).unwrap()
    }

    fn episode(seed: u64, k: usize) -> Episode {
        let pool = generate_synthetic_pool(&SyntheticPoolConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_classification_episode(&pool, SamplerMode::Intershuffle, k, 5, 3, &mut rng).unwrap()
    }

    #[test]
    fn one_shot_prototypes_are_embeddings() {
        let s = spec();
        let p = models::init(&s).unwrap();
        let ep = episode(1, 1);
        let out = protonet_forward(&s, &p, &ep).unwrap();
        let emb = models::forward(&p, &s, &ep.x_s).unwrap();
        let labels = ep.y_s.classes().unwrap();
        for (row, &l) in labels.iter().enumerate() {
            assert_eq!(out.prototypes[l].data(), emb.row(row));
        }
    }

    #[test]
    fn query_on_support_point_is_classified() {
        let s = MlpSpec::new(vec![2, 2], Activation::Relu, 0).unwrap();
        let p = models::init(&s).unwrap();
        let identity = p
            .with_tensors(vec![
                Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                Tensor::zeros(&[1, 2]),
            ])
            .unwrap();
        let ep = Episode {
            x_s: Tensor::from_rows(&[vec![5.0, 0.0], vec![0.0, 5.0], vec![-5.0, -5.0]]).unwrap(),
            y_s: Targets::Classes(vec![2, 0, 1]),
            x_q: Tensor::from_rows(&[vec![0.0, 5.0], vec![-5.0, -5.0]]).unwrap(),
            y_q: Targets::Classes(vec![0, 1]),
            meta: TaskMeta::Classes {
                class_ids: vec![0, 1, 2],
            },
        };
        let out = protonet_forward(&s, &identity, &ep).unwrap();
        assert_eq!(crate::learners::accuracy(&out.logits, &ep.y_q), Some(1.0));
        assert_eq!(out.logits.row(0)[0], 0.0);
    }

    #[test]
    fn missing_label_rejected() {
        let s = spec();
        let p = models::init(&s).unwrap();
        let mut ep = episode(2, 1);
        ep.y_s = Targets::Classes(vec![0, 1, 2, 3, 3]);
        let err = protonet_forward(&s, &p, &ep).unwrap_err().to_string();
        assert!(err.contains("label 4"), "{err}");
    }

    #[test]
    fn support_permutation_is_bit_identical() {
        let s = spec();
        let p = models::init(&s).unwrap();
        let ep = episode(3, 2);
        let shuffled = ep.permute_support(&[9, 3, 0, 7, 1, 5, 2, 8, 6, 4]).unwrap();
        let a = protonet_forward(&s, &p, &ep).unwrap();
        let b = protonet_forward(&s, &p, &shuffled).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn relabelled_training_is_bit_identical() {
        let perm = Augmentation::new(AugmentationKind::LabelPermutation).unwrap();
        let keys = [
            vec![3, 1, 4, 0, 2],
            vec![1, 0, 2, 4, 3],
            vec![4, 3, 2, 1, 0],
        ];
        let batch: Vec<Episode> = (0..3).map(|i| episode(10 + i, 2)).collect();
        let relabelled: Vec<Episode> = batch
            .iter()
            .zip(&keys)
            .map(|(e, k)| perm.apply_key(e, &AugKey::Permutation(k.clone())).unwrap())
            .collect();
        let mut a = ProtoNet::new(spec(), 1e-2, 0).unwrap();
        let mut b = a.clone();
        for _ in 0..5 {
            let ma = a.train_step(&batch).unwrap();
            let mb = b.train_step(&relabelled).unwrap();
            assert_eq!(ma, mb);
        }
        assert_eq!(a.params(), b.params());
    }
}
