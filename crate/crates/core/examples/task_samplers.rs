//! The three classification regimes on a four-class pool, 2-way.

use std::collections::BTreeSet;

use metaaug::tasks::{
    generate_synthetic_pool, sample_classification_episode, SamplerMode, SyntheticPoolConfig,
    TaskMeta,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> metaaug::Result<()> {
    let pool = generate_synthetic_pool(&SyntheticPoolConfig {
        n_classes: 4,
        ..Default::default()
    })?;
    for mode in SamplerMode::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tasks = BTreeSet::new();
        for _ in 0..2000 {
            let ep = sample_classification_episode(&pool, mode, 1, 2, 1, &mut rng)?;
            if let TaskMeta::Classes { class_ids } = ep.meta {
                tasks.insert(class_ids);
            }
        }
        println!(
            "{:<24} {:>2} distinct tasks: {:?}",
            mode.as_str(),
            tasks.len(),
            tasks
        );
    }
    Ok(())
}
