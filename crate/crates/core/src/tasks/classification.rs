use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Episode, SamplerMode, Targets, TaskMeta};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which slice of every class's examples the sampler draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleSplit {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    pub id: usize,
    pub name: String,
    pub examples: Vec<Vec<f64>>,
}

impl ClassEntry {
    /// Disjoint 60/20/20 split of example indices, in storage order.
    fn split_indices(&self, split: ExampleSplit) -> Vec<usize> {
        let n = self.examples.len();
        let train = n * 3 / 5;
        let val = (n - train) / 2;
        match split {
            ExampleSplit::All => (0..n).collect(),
            ExampleSplit::Train => (0..train).collect(),
            ExampleSplit::Val => (train..train + val).collect(),
            ExampleSplit::Test => (train + val..n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPool {
    dim: usize,
    classes: Vec<ClassEntry>,
    active: ExampleSplit,
}

impl ClassPool {
    /// Builds a pool; class ids are assigned in the given order.
    pub fn new(dim: usize, classes: Vec<(String, Vec<Vec<f64>>)>) -> Result<Self> {
        for (name, examples) in &classes {
            if let Some(bad) = examples.iter().find(|e| e.len() != dim) {
                return Err(Error::Sampler(format!(
                    "class {name}: example of width {} in a pool of width {dim}",
                    bad.len()
                )));
            }
        }
        Ok(ClassPool {
            dim,
            classes: classes
                .into_iter()
                .enumerate()
                .map(|(id, (name, examples))| ClassEntry { id, name, examples })
                .collect(),
            active: ExampleSplit::All,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn active_split(&self) -> ExampleSplit {
        self.active
    }

    pub fn with_split(mut self, split: ExampleSplit) -> Self {
        self.active = split;
        self
    }

    /// Example indices of class `idx` in the active split.
    pub fn active_examples(&self, idx: usize) -> Vec<usize> {
        self.classes[idx].split_indices(self.active)
    }

    /// Class-disjoint sub-pool holding classes `range` (ids are preserved).
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<ClassPool> {
        if range.end > self.classes.len() {
            return Err(Error::Sampler(format!(
                "class range {range:?} exceeds pool of {}",
                self.classes.len()
            )));
        }
        Ok(ClassPool {
            dim: self.dim,
            classes: self.classes[range].to_vec(),
            active: self.active,
        })
    }

    /// Fixed grouping of classes into disjoint tasks of `n_way` consecutive
    /// classes; leftover classes are not part of any group.
    pub fn partition(&self, n_way: usize) -> Vec<Vec<usize>> {
        if n_way == 0 {
            return Vec::new();
        }
        (0..self.classes.len() / n_way)
            .map(|g| (g * n_way..(g + 1) * n_way).collect())
            .collect()
    }
}

/// Samples one `n_way`-way episode with `k` support and `q` query examples per class.
///
/// Rows are laid out class by class. The permutation used by intrashuffle is
/// drawn after the examples, so with the same rng state an NME episode and an
/// intrashuffle episode hold the same rows and differ only in label values.
pub fn sample_classification_episode<R: Rng + ?Sized>(
    pool: &ClassPool,
    mode: SamplerMode,
    k: usize,
    n_way: usize,
    q: usize,
    rng: &mut R,
) -> Result<Episode> {
    if n_way == 0 || k == 0 || q == 0 {
        return Err(Error::Sampler(format!(
            "need k, n_way, q >= 1 (got k={k}, n_way={n_way}, q={q})"
        )));
    }
    if pool.len() < n_way {
        return Err(Error::Sampler(format!(
            "{n_way}-way episodes need at least {n_way} classes, pool has {}",
            pool.len()
        )));
    }
    let classes: Vec<usize> = match mode {
        SamplerMode::NonMutuallyExclusive | SamplerMode::Intrashuffle => {
            let groups = pool.partition(n_way);
            groups[rng.random_range(0..groups.len())].clone()
        }
        SamplerMode::Intershuffle => index::sample(rng, pool.len(), n_way).into_vec(),
    };

    let per_class = k + q;
    let mut support_rows = Vec::with_capacity(k * n_way);
    let mut query_rows = Vec::with_capacity(q * n_way);
    for &c in &classes {
        let available = pool.active_examples(c);
        if available.len() < per_class {
            return Err(Error::Sampler(format!(
                "class {} has {} examples in the active split, need {per_class}",
                pool.classes[c].name,
                available.len()
            )));
        }
        let picked = index::sample(rng, available.len(), per_class);
        for (j, pick) in picked.into_iter().enumerate() {
            let row = pool.classes[c].examples[available[pick]].clone();
            if j < k {
                support_rows.push(row);
            } else {
                query_rows.push(row);
            }
        }
    }

    // label_of[position in `classes`]
    let label_of: Vec<usize> = match mode {
        SamplerMode::Intrashuffle => {
            let mut perm: Vec<usize> = (0..n_way).collect();
            perm.shuffle(rng);
            perm
        }
        _ => (0..n_way).collect(),
    };
    let mut class_ids = vec![0; n_way];
    for (pos, &c) in classes.iter().enumerate() {
        class_ids[label_of[pos]] = pool.classes[c].id;
    }
    let labels = |per: usize| -> Vec<usize> {
        label_of
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, per))
            .collect()
    };

    Ok(Episode {
        x_s: Tensor::from_rows(&support_rows)?,
        y_s: Targets::Classes(labels(k)),
        x_q: Tensor::from_rows(&query_rows)?,
        y_q: Targets::Classes(labels(q)),
        meta: TaskMeta::Classes { class_ids },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPoolConfig {
    pub n_classes: usize,
    pub dim: usize,
    /// Root-mean-square distance of an example from its class mean; each
    /// coordinate has standard deviation `spread / sqrt(dim)`.
    pub spread: f64,
    pub examples_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticPoolConfig {
    fn default() -> Self {
        SyntheticPoolConfig {
            n_classes: 20,
            dim: 16,
            spread: 0.35,
            examples_per_class: 60,
            seed: 0,
        }
    }
}

const MAX_MEAN_ATTEMPTS: usize = 10_000;

/// Isotropic Gaussian clusters whose means lie in the unit ball and are at
/// least `2 * spread` apart.
pub fn generate_synthetic_pool(cfg: &SyntheticPoolConfig) -> Result<ClassPool> {
    if cfg.n_classes == 0 || cfg.dim == 0 {
        return Err(Error::Sampler(
            "synthetic pool needs classes and dim >= 1".into(),
        ));
    }
    if !(cfg.spread >= 0.0) {
        return Err(Error::Sampler(format!(
            "spread must be >= 0, got {}",
            cfg.spread
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let min_dist = 2.0 * cfg.spread;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    let mut attempts = 0;
    while means.len() < cfg.n_classes {
        attempts += 1;
        if attempts > MAX_MEAN_ATTEMPTS {
            return Err(Error::Sampler(format!(
                "could not place {} class means {min_dist} apart in the unit ball after \
                 {MAX_MEAN_ATTEMPTS} attempts; use a larger dim or a smaller spread",
                cfg.n_classes
            )));
        }
        let candidate = unit_ball_point(&mut rng, cfg.dim);
        if means.iter().all(|m| dist(m, &candidate) >= min_dist) {
            means.push(candidate);
        }
    }
    let sigma = cfg.spread / (cfg.dim as f64).sqrt();
    let classes = means
        .iter()
        .enumerate()
        .map(|(c, mean)| {
            let examples = (0..cfg.examples_per_class)
                .map(|_| {
                    mean.iter()
                        .map(|&m| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + sigma * z
                        })
                        .collect()
                })
                .collect();
            (format!("class{c:03}"), examples)
        })
        .collect();
    ClassPool::new(cfg.dim, classes)
}

fn unit_ball_point<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let radius = rng.random::<f64>().powf(1.0 / dim as f64);
    dir.into_iter().map(|v| v / norm * radius).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}
