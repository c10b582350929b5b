//! ProtoNet trained on non-mutually-exclusive and on intrashuffled episodes
//! built from the same draws ends with identical parameters.

use metaaug::learners::{MetaLearner, ProtoNet};
use metaaug::models::{Activation, MlpSpec};
use metaaug::tasks::{
    generate_synthetic_pool, sample_classification_episode, SamplerMode, SyntheticPoolConfig,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> metaaug::Result<()> {
    let pool = generate_synthetic_pool(&SyntheticPoolConfig::default())?;
    let spec = MlpSpec::new(vec![16, 32, 16], Activation::Relu, 0)?;
    let mut learners = Vec::new();
    for mode in [SamplerMode::NonMutuallyExclusive, SamplerMode::Intrashuffle] {
        let mut net = ProtoNet::new(spec.clone(), 1e-3, 0)?;
        let mut master = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let batch = (0..4)
                .map(|_| {
                    let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
                    sample_classification_episode(&pool, mode, 1, 5, 5, &mut rng)
                })
                .collect::<metaaug::Result<Vec<_>>>()?;
            net.train_step(&batch)?;
        }
        learners.push(net);
    }
    println!(
        "identical parameters: {}",
        learners[0].params() == learners[1].params()
    );
    Ok(())
}
