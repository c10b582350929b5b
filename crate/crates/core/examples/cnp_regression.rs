//! A conditional neural process trained on shifted sinusoid episodes.

use metaaug::augment::{Augmentation, AugmentationKind};
use metaaug::learners::{Cnp, CnpConfig, MetaLearner};
use metaaug::models::Activation;
use metaaug::tasks::{sample_sinusoid_episode, SinusoidFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> metaaug::Result<()> {
    let fam = SinusoidFamily::new(0);
    let aug = Augmentation::new(AugmentationKind::AdditiveUniform {
        alpha: 1.0,
        wrap_range: None,
    })?;
    let cfg = CnpConfig::mlp(1, 1, 1, &[40, 40], 32, Activation::Relu, 1e-3, 0)?;
    let mut cnp = Cnp::new(cfg, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for step in 1..=500 {
        let batch = (0..16)
            .map(|_| {
                let ep = sample_sinusoid_episode(&fam, 10, 10, None, &mut rng)?;
                Ok(aug.apply(&ep, &mut rng)?.0)
            })
            .collect::<metaaug::Result<Vec<_>>>()?;
        let m = cnp.train_step(&batch)?;
        if step % 100 == 0 {
            println!("step {step:>3}: query mse {:.4}", m.post.loss);
        }
    }
    Ok(())
}
