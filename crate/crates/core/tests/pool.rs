use metaaug::tasks::{generate_synthetic_pool, ClassPool, ExampleSplit, SyntheticPoolConfig};

fn rows(pool: &ClassPool, split: ExampleSplit) -> Vec<(Vec<f64>, usize)> {
    let pool = pool.clone().with_split(split);
    let mut out = Vec::new();
    for c in 0..pool.len() {
        for i in pool.active_examples(c) {
            out.push((pool.classes()[c].examples[i].clone(), c));
        }
    }
    out
}

/// Multinomial logistic regression by full-batch gradient descent.
fn fit_probe(data: &[(Vec<f64>, usize)], n_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; dim + 1]; n_classes];
    let lr = 5.0;
    for _ in 0..5000 {
        let mut g = vec![vec![0.0; dim + 1]; n_classes];
        for (x, y) in data {
            let logits: Vec<f64> = w
                .iter()
                .map(|wc| wc[dim] + wc[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for (c, gc) in g.iter_mut().enumerate() {
                let p = (logits[c] - m).exp() / z - if c == *y { 1.0 } else { 0.0 };
                for (d, xd) in x.iter().enumerate() {
                    gc[d] += p * xd;
                }
                gc[dim] += p;
            }
        }
        for (wc, gc) in w.iter_mut().zip(&g) {
            for (a, b) in wc.iter_mut().zip(gc) {
                *a -= lr * b / data.len() as f64;
            }
        }
    }
    w
}

fn accuracy(w: &[Vec<f64>], data: &[(Vec<f64>, usize)]) -> f64 {
    let dim = data[0].0.len();
    let correct = data
        .iter()
        .filter(|(x, y)| {
            let score =
                |c: usize| w[c][dim] + w[c][..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            (0..w.len()).max_by(|&a, &b| score(a).total_cmp(&score(b))) == Some(*y)
        })
        .count();
    correct as f64 / data.len() as f64
}

#[test]
fn default_pool_is_linearly_learnable() {
    let cfg = SyntheticPoolConfig::default();
    let pool = generate_synthetic_pool(&cfg).unwrap();
    let w = fit_probe(&rows(&pool, ExampleSplit::Train), cfg.n_classes, cfg.dim);
    let held_out = accuracy(&w, &rows(&pool, ExampleSplit::Test));
    assert!(held_out >= 0.95, "held-out probe accuracy {held_out}");
}
