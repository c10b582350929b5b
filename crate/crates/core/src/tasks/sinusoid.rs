use std::f64::consts::PI;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Episode, Targets, TaskMeta};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_INTERVALS: usize = 10;

/// `y = A sin(x - phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SinusoidTask {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x - self.phase).sin()
    }
}

/// Ten disjoint half-unit intervals `[-5 + i, -4.5 + i]` of `[-5, 5]`, each
/// owning one fixed sinusoid drawn at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidFamily {
    pub amplitude_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub intervals: Vec<(f64, f64)>,
    pub assignments: Vec<SinusoidTask>,
}

impl SinusoidFamily {
    pub fn new(seed: u64) -> Self {
        let amplitude_range = (0.1, 5.0);
        let phase_range = (0.0, PI);
        let intervals: Vec<(f64, f64)> = (0..NUM_INTERVALS)
            .map(|i| (-5.0 + i as f64, -4.5 + i as f64))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fam = SinusoidFamily {
            amplitude_range,
            phase_range,
            intervals,
            assignments: Vec::new(),
        };
        fam.assignments = (0..NUM_INTERVALS)
            .map(|_| fam.random_task(&mut rng))
            .collect();
        fam
    }

    /// A sinusoid drawn from the amplitude and phase ranges.
    pub fn random_task<R: Rng + ?Sized>(&self, rng: &mut R) -> SinusoidTask {
        SinusoidTask {
            amplitude: rng.random_range(self.amplitude_range.0..=self.amplitude_range.1),
            phase: rng.random_range(self.phase_range.0..=self.phase_range.1),
        }
    }

    /// Index of the interval containing `x`, if any.
    pub fn interval_of(&self, x: f64) -> Option<usize> {
        self.intervals
            .iter()
            .position(|&(lo, hi)| (lo..=hi).contains(&x))
    }

    /// Target of the fixed training task owning `x`.
    pub fn eval(&self, x: f64) -> Option<f64> {
        self.interval_of(x).map(|i| self.assignments[i].eval(x))
    }

    /// Draws an episode from interval `interval` labelled by `task`.
    pub fn episode_for<R: Rng + ?Sized>(
        &self,
        interval: usize,
        task: SinusoidTask,
        k: usize,
        q: usize,
        rng: &mut R,
    ) -> Result<Episode> {
        if k == 0 || q == 0 {
            return Err(Error::Sampler(format!(
                "sinusoid episodes need k, q >= 1 (got k={k}, q={q})"
            )));
        }
        let (lo, hi) = *self
            .intervals
            .get(interval)
            .ok_or_else(|| Error::Sampler(format!("no interval {interval}")))?;
        let xs = Uniform::new_inclusive(lo, hi).expect("non-empty interval");
        let mut draw = |n: usize| {
            let x: Vec<f64> = (0..n).map(|_| xs.sample(rng)).collect();
            let y: Vec<f64> = x.iter().map(|&v| task.eval(v)).collect();
            (Tensor::column(&x), Tensor::column(&y))
        };
        let (x_s, y_s) = draw(k);
        let (x_q, y_q) = draw(q);
        Ok(Episode {
            x_s,
            y_s: Targets::Values(y_s),
            x_q,
            y_q: Targets::Values(y_q),
            meta: TaskMeta::Sinusoid {
                interval,
                amplitude: task.amplitude,
                phase: task.phase,
                shift: None,
            },
        })
    }

    /// Episode of a fresh sinusoid (not one of the fixed assignments) on a
    /// uniformly chosen interval. Used for validation and test tasks.
    pub fn sample_novel_episode<R: Rng + ?Sized>(
        &self,
        k: usize,
        q: usize,
        rng: &mut R,
    ) -> Result<Episode> {
        let interval = rng.random_range(0..NUM_INTERVALS);
        let task = self.random_task(rng);
        self.episode_for(interval, task, k, q, rng)
    }
}

/// Episode of one of the family's fixed tasks. With `shift_noise`, a single
/// shift is drawn for the episode and added to every support and query target.
pub fn sample_sinusoid_episode<R: Rng + ?Sized>(
    fam: &SinusoidFamily,
    k: usize,
    q: usize,
    shift_noise: Option<&Uniform<f64>>,
    rng: &mut R,
) -> Result<Episode> {
    let interval = rng.random_range(0..NUM_INTERVALS);
    let mut ep = fam.episode_for(interval, fam.assignments[interval], k, q, rng)?;
    if let Some(noise) = shift_noise {
        let eps = noise.sample(rng);
        let shift = |t: &Targets| -> Result<Targets> {
            let v = t.values().expect("regression targets");
            Ok(Targets::Values(v.add(&Tensor::full(v.shape(), eps))?))
        };
        ep.y_s = shift(&ep.y_s)?;
        ep.y_q = shift(&ep.y_q)?;
        if let TaskMeta::Sinusoid { shift, .. } = &mut ep.meta {
            *shift = Some(eps);
        }
    }
    Ok(ep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervals_match_layout() {
        let fam = SinusoidFamily::new(0);
        assert_eq!(fam.intervals[0], (-5.0, -4.5));
        assert_eq!(fam.intervals[1], (-4.0, -3.5));
        assert_eq!(fam.intervals[9], (4.0, 4.5));
        for w in fam.intervals.windows(2) {
            assert!((w[1].0 - w[0].1 - 0.5).abs() < 1e-12);
        }
        assert_eq!(fam.interval_of(-4.7), Some(0));
        assert_eq!(fam.interval_of(-4.2), None);
        assert_eq!(fam.interval_of(4.25), Some(9));
    }

    #[test]
    fn assignments_within_ranges() {
        let fam = SinusoidFamily::new(3);
        assert_eq!(fam.assignments.len(), 10);
        for t in &fam.assignments {
            assert!((0.1..=5.0).contains(&t.amplitude));
            assert!((0.0..=PI).contains(&t.phase));
        }
        assert_eq!(fam, SinusoidFamily::new(3));
    }

    #[test]
    fn zero_phase_unit_amplitude_at_origin() {
        let t = SinusoidTask {
            amplitude: 1.0,
            phase: 0.0,
        };
        assert_eq!(t.eval(0.0), 0.0);
    }

    #[test]
    fn shared_shift_applies_to_support_and_query() {
        let fam = SinusoidFamily::new(1);
        let noise = Uniform::new_inclusive(-1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ep = sample_sinusoid_episode(&fam, 10, 10, Some(&noise), &mut rng).unwrap();
        let TaskMeta::Sinusoid {
            interval, shift, ..
        } = ep.meta
        else {
            unreachable!()
        };
        let eps = shift.unwrap();
        let task = fam.assignments[interval];
        for (x, y) in [(&ep.x_s, &ep.y_s), (&ep.x_q, &ep.y_q)] {
            let y = y.values().unwrap();
            for r in 0..x.rows() {
                let want = task.eval(x.row(r)[0]) + eps;
                assert!((y.row(r)[0] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inputs_stay_inside_intervals() {
        let fam = SinusoidFamily::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let ep = sample_sinusoid_episode(&fam, 5, 5, None, &mut rng).unwrap();
            let novel = fam.sample_novel_episode(5, 5, &mut rng).unwrap();
            for e in [&ep, &novel] {
                for x in e.x_s.data().iter().chain(e.x_q.data()) {
                    assert!(fam.interval_of(*x).is_some(), "{x}");
                }
            }
        }
    }

    #[test]
    fn shift_mean_is_centred() {
        let fam = SinusoidFamily::new(4);
        let noise = Uniform::new_inclusive(-1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let ep = sample_sinusoid_episode(&fam, 1, 1, Some(&noise), &mut rng).unwrap();
            if let TaskMeta::Sinusoid { shift, .. } = ep.meta {
                total += shift.unwrap();
            }
        }
        assert!((total / n as f64).abs() < 0.02);
    }

    #[test]
    fn rejects_empty_sets() {
        let fam = SinusoidFamily::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_sinusoid_episode(&fam, 0, 3, None, &mut rng).is_err());
    }
}
