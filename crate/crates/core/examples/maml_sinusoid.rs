//! Short MAML run on the sinusoid family, then the test adaptation curve.
//! Inputs are scaled from [-5, 5] to [-1, 1] as the experiment harness does.

use metaaug::learners::{adaptation_curve, Maml, MamlConfig, MetaLearner};
use metaaug::models::{Activation, MlpSpec};
use metaaug::tasks::{sample_sinusoid_episode, SinusoidFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> metaaug::Result<()> {
    let fam = SinusoidFamily::new(0);
    let spec = MlpSpec::new(vec![1, 40, 40, 1], Activation::Relu, 0)?;
    let cfg = MamlConfig::sinusoid();
    let mut maml = Maml::new(spec.clone(), cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for step in 1..=2000 {
        let batch = (0..cfg.meta_batch)
            .map(|_| sample_sinusoid_episode(&fam, 10, 10, None, &mut rng)?.scale_inputs(0.2))
            .collect::<metaaug::Result<Vec<_>>>()?;
        let m = maml.train_step(&batch)?;
        if step % 250 == 0 {
            println!(
                "step {step:>3}: pre {:.4}  post {:.4}",
                m.pre.loss, m.post.loss
            );
        }
    }
    let ep = fam
        .sample_novel_episode(10, 10, &mut rng)?
        .scale_inputs(0.2)?;
    for (i, s) in adaptation_curve(
        maml.params(),
        &spec,
        &ep,
        cfg.inner_lr,
        cfg.inner_steps_eval,
    )?
    .iter()
    .enumerate()
    {
        println!("adaptation step {i:>2}: query mse {:.4}", s.loss);
    }
    Ok(())
}
