//! Per-episode augmentations.
//!
//! One key is drawn per episode and the same key transforms support and
//! query targets. CE-increasing kinds only touch targets; CE-preserving kinds
//! only touch inputs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{Episode, Targets, TaskMeta};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeClass {
    Preserving,
    Increasing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentationKind {
    /// Uniform permutation of the episode's `n_way` labels.
    LabelPermutation,
    /// With `wrap_range = Some(r)`: shift drawn from `U(-r*alpha, r*alpha)` and
    /// targets wrapped into `[0, r)`. Otherwise shift from `U[-alpha, alpha]`.
    AdditiveUniform {
        alpha: f64,
        wrap_range: Option<f64>,
    },
    /// Shift drawn uniformly from a finite set.
    AdditiveDiscrete {
        values: Vec<f64>,
        wrap_range: Option<f64>,
    },
    /// Gaussian noise on inputs only.
    InputJitter {
        sigma: f64,
    },
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    kind: AugmentationKind,
}

/// The per-episode random key.
#[derive(Debug, Clone, PartialEq)]
pub enum AugKey {
    None,
    /// `perm[old_label] = new_label`.
    Permutation(Vec<usize>),
    Shift(f64),
}

impl Augmentation {
    pub fn new(kind: AugmentationKind) -> Result<Self> {
        match &kind {
            AugmentationKind::AdditiveUniform { alpha, wrap_range } => {
                if !(alpha.is_finite() && *alpha >= 0.0) {
                    return Err(Error::Augmentation(format!(
                        "alpha must be >= 0, got {alpha}"
                    )));
                }
                check_wrap(*wrap_range)?;
            }
            AugmentationKind::AdditiveDiscrete { values, wrap_range } => {
                if values.is_empty() {
                    return Err(Error::Augmentation("discrete value set is empty".into()));
                }
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::Augmentation(format!(
                        "discrete value set has duplicates: {values:?}"
                    )));
                }
                check_wrap(*wrap_range)?;
            }
            AugmentationKind::InputJitter { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::Augmentation(format!(
                        "sigma must be >= 0, got {sigma}"
                    )));
                }
            }
            AugmentationKind::LabelPermutation | AugmentationKind::Identity => {}
        }
        Ok(Augmentation { kind })
    }

    pub fn identity() -> Self {
        Augmentation {
            kind: AugmentationKind::Identity,
        }
    }

    pub fn kind(&self) -> &AugmentationKind {
        &self.kind
    }

    pub fn ce_class(&self) -> CeClass {
        match self.kind {
            AugmentationKind::LabelPermutation
            | AugmentationKind::AdditiveUniform { .. }
            | AugmentationKind::AdditiveDiscrete { .. } => CeClass::Increasing,
            AugmentationKind::InputJitter { .. } | AugmentationKind::Identity => {
                CeClass::Preserving
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == AugmentationKind::Identity
    }

    fn wrap_range(&self) -> Option<f64> {
        match self.kind {
            AugmentationKind::AdditiveUniform { wrap_range, .. }
            | AugmentationKind::AdditiveDiscrete { wrap_range, .. } => wrap_range,
            _ => None,
        }
    }

    /// Draws the per-episode key.
    pub fn sample_key<R: Rng + ?Sized>(&self, ep: &Episode, rng: &mut R) -> Result<AugKey> {
        self.check_compatible(ep)?;
        Ok(match &self.kind {
            AugmentationKind::LabelPermutation => {
                let n = ep.n_way().expect("checked classification");
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                AugKey::Permutation(perm)
            }
            AugmentationKind::AdditiveUniform { alpha, wrap_range } => {
                let half = wrap_range.map_or(*alpha, |r| r * alpha);
                AugKey::Shift(if half > 0.0 {
                    rng.random_range(-half..=half)
                } else {
                    0.0
                })
            }
            AugmentationKind::AdditiveDiscrete { values, .. } => {
                AugKey::Shift(values[rng.random_range(0..values.len())])
            }
            AugmentationKind::InputJitter { .. } | AugmentationKind::Identity => AugKey::None,
        })
    }

    /// Augments `ep` with a freshly drawn key and returns the key alongside.
    pub fn apply<R: Rng + ?Sized>(&self, ep: &Episode, rng: &mut R) -> Result<(Episode, AugKey)> {
        let key = self.sample_key(ep, rng)?;
        let out = match &self.kind {
            AugmentationKind::InputJitter { sigma } => jitter(ep, *sigma, rng)?,
            _ => self.apply_key(ep, &key)?,
        };
        Ok((out, key))
    }

    /// Deterministic part of [`apply`](Self::apply) for target-keyed kinds.
    pub fn apply_key(&self, ep: &Episode, key: &AugKey) -> Result<Episode> {
        self.check_compatible(ep)?;
        match (&self.kind, key) {
            (AugmentationKind::Identity, _) => Ok(ep.clone()),
            (AugmentationKind::LabelPermutation, AugKey::Permutation(perm)) => {
                check_perm(perm, ep.n_way().unwrap_or(0))?;
                permute_labels(ep, perm)
            }
            (
                AugmentationKind::AdditiveUniform { .. }
                | AugmentationKind::AdditiveDiscrete { .. },
                AugKey::Shift(eps),
            ) => shift_targets(ep, *eps, self.wrap_range()),
            (AugmentationKind::InputJitter { .. }, _) => Err(Error::Augmentation(
                "input jitter draws per-example noise and has no replayable key".into(),
            )),
            (_, key) => Err(Error::Augmentation(format!(
                "key {key:?} does not fit augmentation {:?}",
                self.kind
            ))),
        }
    }

    /// Undoes `apply` given its key. Wrapped shifts are recovered modulo the
    /// wrap range.
    pub fn invert(&self, ep: &Episode, key: &AugKey) -> Result<Episode> {
        self.check_compatible(ep)?;
        match (&self.kind, key) {
            (AugmentationKind::Identity, _) => Ok(ep.clone()),
            (AugmentationKind::LabelPermutation, AugKey::Permutation(perm)) => {
                check_perm(perm, ep.n_way().unwrap_or(0))?;
                let mut inverse = vec![0; perm.len()];
                for (old, &new) in perm.iter().enumerate() {
                    inverse[new] = old;
                }
                permute_labels(ep, &inverse)
            }
            (
                AugmentationKind::AdditiveUniform { .. }
                | AugmentationKind::AdditiveDiscrete { .. },
                AugKey::Shift(eps),
            ) => shift_targets(ep, -eps, self.wrap_range()),
            (AugmentationKind::InputJitter { .. }, _) => {
                Err(Error::Augmentation("input jitter is not invertible".into()))
            }
            (_, key) => Err(Error::Augmentation(format!(
                "key {key:?} does not fit augmentation {:?}",
                self.kind
            ))),
        }
    }

    fn check_compatible(&self, ep: &Episode) -> Result<()> {
        match self.kind {
            AugmentationKind::LabelPermutation if !ep.is_classification() => Err(
                Error::Augmentation("label permutation needs a classification episode".into()),
            ),
            AugmentationKind::AdditiveUniform { .. }
            | AugmentationKind::AdditiveDiscrete { .. }
                if ep.is_classification() =>
            {
                Err(Error::Augmentation(
                    "additive target noise needs a regression episode".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

fn check_wrap(wrap: Option<f64>) -> Result<()> {
    match wrap {
        Some(r) if !(r.is_finite() && r > 0.0) => Err(Error::Augmentation(format!(
            "wrap range must be positive, got {r}"
        ))),
        _ => Ok(()),
    }
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    let ok = perm.len() == n
        && perm
            .iter()
            .all(|&p| p < n && !std::mem::replace(&mut seen[p], true));
    if ok {
        Ok(())
    } else {
        Err(Error::Augmentation(format!(
            "{perm:?} is not a permutation of 0..{n}"
        )))
    }
}

/// Non-negative remainder in `[0, range)`.
pub fn wrap(value: f64, range: f64) -> f64 {
    let r = value.rem_euclid(range);
    if r >= range {
        r - range
    } else {
        r
    }
}

fn permute_labels(ep: &Episode, perm: &[usize]) -> Result<Episode> {
    let relabel = |t: &Targets| match t {
        Targets::Classes(c) => Targets::Classes(c.iter().map(|&l| perm[l]).collect()),
        Targets::Values(_) => unreachable!("checked classification"),
    };
    let meta = match &ep.meta {
        TaskMeta::Classes { class_ids } => {
            let mut ids = vec![0; class_ids.len()];
            for (old, &id) in class_ids.iter().enumerate() {
                ids[perm[old]] = id;
            }
            TaskMeta::Classes { class_ids: ids }
        }
        other => other.clone(),
    };
    Ok(Episode {
        x_s: ep.x_s.clone(),
        y_s: relabel(&ep.y_s),
        x_q: ep.x_q.clone(),
        y_q: relabel(&ep.y_q),
        meta,
    })
}

fn shift_targets(ep: &Episode, eps: f64, wrap_range: Option<f64>) -> Result<Episode> {
    let shift = |t: &Targets| -> Result<Targets> {
        let v = t.values().expect("checked regression");
        let data = v
            .data()
            .iter()
            .map(|&y| {
                let s = y + eps;
                wrap_range.map_or(s, |r| wrap(s, r))
            })
            .collect();
        Ok(Targets::Values(Tensor::new(v.shape().to_vec(), data)?))
    };
    Ok(Episode {
        x_s: ep.x_s.clone(),
        y_s: shift(&ep.y_s)?,
        x_q: ep.x_q.clone(),
        y_q: shift(&ep.y_q)?,
        meta: ep.meta.clone(),
    })
}

fn jitter<R: Rng + ?Sized>(ep: &Episode, sigma: f64, rng: &mut R) -> Result<Episode> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Augmentation(e.to_string()))?;
    let mut perturb = |x: &Tensor| {
        let data = x.data().iter().map(|v| v + noise.sample(rng)).collect();
        Tensor::new(x.shape().to_vec(), data)
    };
    Ok(Episode {
        x_s: perturb(&ep.x_s)?,
        x_q: perturb(&ep.x_q)?,
        ..ep.clone()
    })
}

/// The `aug.*` block of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    pub alpha: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub wrap_range: Option<f64>,
    pub sigma: Option<f64>,
}

fn default_kind() -> String {
    "identity".into()
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            kind: default_kind(),
            alpha: None,
            values: None,
            wrap_range: None,
            sigma: None,
        }
    }
}

impl AugmentationConfig {
    pub fn build(&self) -> Result<Augmentation> {
        let missing =
            |key: &str| Error::Config(format!("aug.kind = {} needs aug.{key}", self.kind));
        let kind = match self.kind.as_str() {
            "identity" => AugmentationKind::Identity,
            "label_permutation" => AugmentationKind::LabelPermutation,
            "additive_uniform" => AugmentationKind::AdditiveUniform {
                alpha: self.alpha.ok_or_else(|| missing("alpha"))?,
                wrap_range: self.wrap_range,
            },
            "additive_discrete" => AugmentationKind::AdditiveDiscrete {
                values: self.values.clone().ok_or_else(|| missing("values"))?,
                wrap_range: self.wrap_range,
            },
            "input_jitter" => AugmentationKind::InputJitter {
                sigma: self.sigma.ok_or_else(|| missing("sigma"))?,
            },
            other => return Err(Error::Config(format!("unknown aug.kind {other}"))),
        };
        Augmentation::new(kind).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn regression_episode(ys: &[f64], yq: &[f64]) -> Episode {
        Episode {
            x_s: Tensor::column(&vec![0.0; ys.len()]),
            y_s: Targets::Values(Tensor::column(ys)),
            x_q: Tensor::column(&vec![1.0; yq.len()]),
            y_q: Targets::Values(Tensor::column(yq)),
            meta: TaskMeta::Sinusoid {
                interval: 0,
                amplitude: 1.0,
                phase: 0.0,
                shift: None,
            },
        }
    }

    fn classification_episode() -> Episode {
        Episode {
            x_s: Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            y_s: Targets::Classes(vec![0, 1, 2]),
            x_q: Tensor::from_rows(&[vec![2.0], vec![0.0]]).unwrap(),
            y_q: Targets::Classes(vec![2, 0]),
            meta: TaskMeta::Classes {
                class_ids: vec![10, 11, 12],
            },
        }
    }

    fn wrapped(alpha: f64) -> Augmentation {
        Augmentation::new(AugmentationKind::AdditiveUniform {
            alpha,
            wrap_range: Some(10.0),
        })
        .unwrap()
    }

    #[test]
    fn ce_classes() {
        let inc = [
            AugmentationKind::LabelPermutation,
            AugmentationKind::AdditiveUniform {
                alpha: 1.0,
                wrap_range: None,
            },
            AugmentationKind::AdditiveDiscrete {
                values: vec![0.0, 0.5],
                wrap_range: None,
            },
        ];
        for k in inc {
            assert_eq!(
                Augmentation::new(k).unwrap().ce_class(),
                CeClass::Increasing
            );
        }
        let pres = [
            AugmentationKind::InputJitter { sigma: 0.1 },
            AugmentationKind::Identity,
        ];
        for k in pres {
            assert_eq!(
                Augmentation::new(k).unwrap().ce_class(),
                CeClass::Preserving
            );
        }
    }

    #[test]
    fn discrete_values_validated() {
        let bad = |values: Vec<f64>| {
            Augmentation::new(AugmentationKind::AdditiveDiscrete {
                values,
                wrap_range: None,
            })
            .is_err()
        };
        assert!(bad(vec![]));
        assert!(bad(vec![0.25, 0.5, 0.25]));
        assert!(!bad(vec![0.0, 0.25, 0.5, 0.75]));
    }

    #[test]
    fn wraparound_shift() {
        let aug = wrapped(0.5);
        let ep = regression_episode(&[9.5], &[9.5]);
        let out = aug.apply_key(&ep, &AugKey::Shift(1.0)).unwrap();
        let y = out.y_s.values().unwrap().item();
        assert!((y - 0.5).abs() < 1e-12);
        let back = aug.invert(&out, &AugKey::Shift(1.0)).unwrap();
        assert!((back.y_q.values().unwrap().item() - 9.5).abs() < 1e-12);
    }

    #[test]
    fn wrapped_key_range_scales_with_alpha() {
        let aug = wrapped(0.3);
        let ep = regression_episode(&[1.0], &[1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut max: f64 = 0.0;
        for _ in 0..2000 {
            let AugKey::Shift(e) = aug.sample_key(&ep, &mut rng).unwrap() else {
                unreachable!()
            };
            assert!(e.abs() <= 3.0);
            max = max.max(e.abs());
        }
        assert!(max > 2.9);
    }

    #[test]
    fn identity_permutation_is_noop() {
        let aug = Augmentation::new(AugmentationKind::LabelPermutation).unwrap();
        let ep = classification_episode();
        let out = aug
            .apply_key(&ep, &AugKey::Permutation(vec![0, 1, 2]))
            .unwrap();
        assert_eq!(out, ep);
    }

    #[test]
    fn permutation_relabels_consistently() {
        let aug = Augmentation::new(AugmentationKind::LabelPermutation).unwrap();
        let ep = classification_episode();
        let key = AugKey::Permutation(vec![2, 0, 1]);
        let out = aug.apply_key(&ep, &key).unwrap();
        assert_eq!(out.y_s, Targets::Classes(vec![2, 0, 1]));
        assert_eq!(out.y_q, Targets::Classes(vec![1, 2]));
        // Class 10 now answers to label 2.
        assert_eq!(
            out.meta,
            TaskMeta::Classes {
                class_ids: vec![11, 12, 10]
            }
        );
        assert_eq!(aug.invert(&out, &key).unwrap(), ep);
        assert!(aug
            .apply_key(&ep, &AugKey::Permutation(vec![0, 0, 1]))
            .is_err());
    }

    #[test]
    fn discrete_frequencies_are_uniform() {
        let aug = Augmentation::new(AugmentationKind::AdditiveDiscrete {
            values: vec![0.0, 0.25, 0.5, 0.75],
            wrap_range: None,
        })
        .unwrap();
        let ep = regression_episode(&[0.0], &[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        let n = 40_000;
        for _ in 0..n {
            let (out, key) = aug.apply(&ep, &mut rng).unwrap();
            let AugKey::Shift(e) = key else {
                unreachable!()
            };
            assert_eq!(out.y_s.values().unwrap().item(), e);
            counts[(e / 0.25).round() as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn jitter_moves_inputs_only() {
        let aug = Augmentation::new(AugmentationKind::InputJitter { sigma: 0.5 }).unwrap();
        let ep = classification_episode();
        let (out, key) = aug.apply(&ep, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(key, AugKey::None);
        assert_eq!(out.y_s, ep.y_s);
        assert_eq!(out.y_q, ep.y_q);
        assert_ne!(out.x_s, ep.x_s);
        assert!(aug.invert(&out, &key).is_err());
    }

    #[test]
    fn incompatible_episode_kinds() {
        let perm = Augmentation::new(AugmentationKind::LabelPermutation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(perm
            .apply(&regression_episode(&[1.0], &[1.0]), &mut rng)
            .is_err());
        assert!(wrapped(1.0)
            .apply(&classification_episode(), &mut rng)
            .is_err());
    }

    #[test]
    fn config_builds_kinds() {
        let cfg = AugmentationConfig {
            kind: "additive_discrete".into(),
            values: Some(vec![0.0, 0.25]),
            ..Default::default()
        };
        assert!(matches!(
            cfg.build().unwrap().kind(),
            AugmentationKind::AdditiveDiscrete { .. }
        ));
        let cfg = AugmentationConfig {
            kind: "additive_uniform".into(),
            ..Default::default()
        };
        assert!(cfg.build().is_err());
        assert!(AugmentationConfig::default().build().unwrap().is_identity());
    }

    #[test]
    fn wrap_is_non_negative() {
        assert_eq!(wrap(-0.5, 10.0), 9.5);
        assert_eq!(wrap(10.0, 10.0), 0.0);
        let w = wrap(-1e-17, 10.0);
        assert!((0.0..10.0).contains(&w));
    }

    fn circular_gap(a: f64, b: f64, range: Option<f64>) -> f64 {
        let d = (a - b).abs();
        range.map_or(d, |r| d.min(r - d))
    }

    fn arb_regression_aug() -> impl Strategy<Value = Augmentation> {
        prop_oneof![
            (0.0..2.0f64).prop_map(|alpha| AugmentationKind::AdditiveUniform {
                alpha,
                wrap_range: None
            }),
            (0.0..1.0f64, 1.0..20.0f64).prop_map(|(alpha, r)| AugmentationKind::AdditiveUniform {
                alpha,
                wrap_range: Some(r)
            }),
            Just(AugmentationKind::AdditiveDiscrete {
                values: vec![0.0, 0.25, 0.5, 0.75],
                wrap_range: Some(1.0)
            }),
        ]
        .prop_map(|k| Augmentation::new(k).unwrap())
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn regression_round_trip(
            aug in arb_regression_aug(),
            raw in proptest::collection::vec(0.0..1.0f64, 2..12),
            seed in any::<u64>(),
        ) {
            let scale = aug.wrap_range().unwrap_or(40.0);
            let offset = if aug.wrap_range().is_some() { 0.0 } else { -20.0 };
            let ys: Vec<f64> = raw.iter().map(|u| offset + u * scale).collect();
            let (s, q) = ys.split_at(ys.len() / 2);
            let ep = regression_episode(s, q);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, key) = aug.apply(&ep, &mut rng).unwrap();
            let AugKey::Shift(eps) = key else { unreachable!() };
            // Same shift on support and query.
            for (before, after) in [(&ep.y_s, &out.y_s), (&ep.y_q, &out.y_q)] {
                for (b, a) in before.values().unwrap().data().iter().zip(after.values().unwrap().data()) {
                    prop_assert!(circular_gap(b + eps, *a, aug.wrap_range()) < 1e-12);
                }
            }
            prop_assert_eq!(&out.x_s, &ep.x_s);
            let back = aug.invert(&out, &key).unwrap();
            for (b, a) in [(&ep.y_s, &back.y_s), (&ep.y_q, &back.y_q)] {
                for (x, y) in b.values().unwrap().data().iter().zip(a.values().unwrap().data()) {
                    prop_assert!(circular_gap(*x, *y, aug.wrap_range()) < 1e-12);
                }
            }
        }

        #[test]
        fn permutation_round_trip_is_bitwise(n in 2usize..8, seed in any::<u64>()) {
            let labels: Vec<usize> = (0..3 * n).map(|i| i % n).collect();
            let x = Tensor::column(&labels.iter().map(|&l| l as f64).collect::<Vec<_>>());
            let ep = Episode {
                x_s: x.clone(),
                y_s: Targets::Classes(labels.clone()),
                x_q: x,
                y_q: Targets::Classes(labels),
                meta: TaskMeta::Classes { class_ids: (100..100 + n).collect() },
            };
            let aug = Augmentation::new(AugmentationKind::LabelPermutation).unwrap();
            let (out, key) = aug.apply(&ep, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&out.x_s, &ep.x_s);
            // Support and query rows of the same class get the same new label.
            prop_assert_eq!(&out.y_s, &out.y_q);
            prop_assert_eq!(aug.invert(&out, &key).unwrap(), ep);
        }
    }

    #[test]
    fn permuted_label_marginal_is_uniform() {
        let aug = Augmentation::new(AugmentationKind::LabelPermutation).unwrap();
        let ep = classification_episode();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            let (out, _) = aug.apply(&ep, &mut rng).unwrap();
            counts[out.y_s.classes().unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }
}
