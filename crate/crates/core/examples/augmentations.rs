//! Apply and invert each augmentation kind.

use metaaug::augment::{wrap, Augmentation, AugmentationKind};
use metaaug::tasks::{
    generate_synthetic_pool, sample_classification_episode, SamplerMode, SinusoidFamily,
    SyntheticPoolConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> metaaug::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!("wrap(9.5 + 1.0, 10) = {}", wrap(9.5 + 1.0, 10.0));

    let pool = generate_synthetic_pool(&SyntheticPoolConfig::default())?;
    let cls = sample_classification_episode(&pool, SamplerMode::Intershuffle, 1, 5, 1, &mut rng)?;
    let perm = Augmentation::new(AugmentationKind::LabelPermutation)?;
    let (relabelled, key) = perm.apply(&cls, &mut rng)?;
    println!(
        "labels {:?} -> {:?} with {key:?}",
        cls.y_s.classes().unwrap(),
        relabelled.y_s.classes().unwrap()
    );
    assert_eq!(perm.invert(&relabelled, &key)?, cls);

    let reg = SinusoidFamily::new(0).sample_novel_episode(4, 4, &mut rng)?;
    for kind in [
        AugmentationKind::AdditiveUniform {
            alpha: 0.5,
            wrap_range: Some(10.0),
        },
        AugmentationKind::AdditiveDiscrete {
            values: vec![0.0, 0.25, 0.5, 0.75],
            wrap_range: None,
        },
        AugmentationKind::InputJitter { sigma: 0.1 },
    ] {
        let aug = Augmentation::new(kind)?;
        let (out, key) = aug.apply(&reg, &mut rng)?;
        let restored = aug
            .invert(&out, &key)
            .map(|_| "invertible")
            .unwrap_or("not invertible");
        println!(
            "{:?} ({:?}): key {key:?}, {restored}",
            aug.kind(),
            aug.ce_class()
        );
    }
    Ok(())
}
