//! The interval-partitioned sinusoid family and a shifted episode.

use metaaug::augment::{Augmentation, AugmentationKind};
use metaaug::tasks::{sample_sinusoid_episode, SinusoidFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> metaaug::Result<()> {
    let fam = SinusoidFamily::new(0);
    for (i, ((lo, hi), t)) in fam.intervals.iter().zip(&fam.assignments).enumerate() {
        println!(
            "interval {i}: [{lo:>4}, {hi:>4}]  A = {:.3}  phase = {:.3}",
            t.amplitude, t.phase
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ep = sample_sinusoid_episode(&fam, 5, 5, None, &mut rng)?;
    let aug = Augmentation::new(AugmentationKind::AdditiveUniform {
        alpha: 1.0,
        wrap_range: None,
    })?;
    let (shifted, key) = aug.apply(&ep, &mut rng)?;
    println!("key {key:?}");
    for (a, b) in ep
        .y_s
        .values()
        .unwrap()
        .data()
        .iter()
        .zip(shifted.y_s.values().unwrap().data())
    {
        println!("support y {a:>8.4} -> {b:>8.4}");
    }
    Ok(())
}
