//! Exact conditional entropies before and after a shared-key augmentation.

use metaaug::infotheory::{
    label_permutation_map, random_instance, verify_theorem1, FiniteJoint, NoiseMap, NoiseSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn main() -> metaaug::Result<()> {
    let joint = FiniteJoint::new(
        s(&["a", "b"]),
        s(&["0", "1"]),
        vec![vec![0.3, 0.1], vec![0.2, 0.4]],
    )?;
    let noise = NoiseSpec::uniform(s(&["0", "1", "2"]))?;
    let map = NoiseMap::from_fn(&noise, &joint, |e, y| format!("{y}+{e}"));
    println!("{}\n", verify_theorem1(&joint, &noise, &map)?);

    let (perm_noise, perm_map) = label_permutation_map(&joint)?;
    println!(
        "label permutation:\n{}\n",
        verify_theorem1(&joint, &perm_noise, &perm_map)?
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let collapsing = random_instance(false, &mut rng);
    println!("non-injective map:\n{}", collapsing.verify()?);
    Ok(())
}
