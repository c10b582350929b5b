//! Exact conditional entropies of finite joints and their noise-augmented
//! versions. All entropies are in bits.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENTROPY_TOL: f64 = 1e-9;
const SUM_TOL: f64 = 1e-12;

fn dist_err(msg: impl Into<String>) -> Error {
    Error::Distribution(msg.into())
}

fn check_symbols(what: &str, symbols: &[String]) -> Result<()> {
    if symbols.is_empty() {
        return Err(dist_err(format!("{what} support is empty")));
    }
    let mut seen = std::collections::HashSet::new();
    for s in symbols {
        if !seen.insert(s) {
            return Err(dist_err(format!("{what} support repeats symbol {s:?}")));
        }
    }
    Ok(())
}

fn check_probs(what: &str, p: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for v in p {
        if !(v.is_finite() && v >= 0.0) {
            return Err(dist_err(format!("{what} has invalid probability {v}")));
        }
        total += v;
    }
    if (total - 1.0).abs() > SUM_TOL {
        return Err(dist_err(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// `-p log2 p` with `0 log 0 = 0`.
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Joint distribution over `x_support × y_support`; `p[i][j] = p(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteJoint {
    x_support: Vec<String>,
    y_support: Vec<String>,
    p: Vec<Vec<f64>>,
}

impl FiniteJoint {
    pub fn new(x_support: Vec<String>, y_support: Vec<String>, p: Vec<Vec<f64>>) -> Result<Self> {
        check_symbols("x", &x_support)?;
        check_symbols("y", &y_support)?;
        if p.len() != x_support.len() || p.iter().any(|r| r.len() != y_support.len()) {
            return Err(dist_err(format!(
                "probability table must be {}x{}",
                x_support.len(),
                y_support.len()
            )));
        }
        check_probs("joint", p.iter().flatten().copied())?;
        Ok(FiniteJoint {
            x_support,
            y_support,
            p,
        })
    }

    pub fn x_support(&self) -> &[String] {
        &self.x_support
    }

    pub fn y_support(&self) -> &[String] {
        &self.y_support
    }

    pub fn p(&self) -> &[Vec<f64>] {
        &self.p
    }

    /// Probability of `(x, y)` by symbol; zero for unknown symbols.
    pub fn prob(&self, x: &str, y: &str) -> f64 {
        let xi = self.x_support.iter().position(|s| s == x);
        let yi = self.y_support.iter().position(|s| s == y);
        match (xi, yi) {
            (Some(i), Some(j)) => self.p[i][j],
            _ => 0.0,
        }
    }

    /// `H(Y|X) = H(X,Y) - H(X)`, summed per row.
    pub fn conditional_entropy(&self) -> f64 {
        self.p
            .iter()
            .map(|row| {
                let px: f64 = row.iter().sum();
                row.iter().map(|&v| plogp(v)).sum::<f64>() - plogp(px)
            })
            .sum()
    }
}

/// Distribution of the noise key, independent of `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    eps_support: Vec<String>,
    p_eps: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(eps_support: Vec<String>, p_eps: Vec<f64>) -> Result<Self> {
        check_symbols("eps", &eps_support)?;
        if p_eps.len() != eps_support.len() {
            return Err(dist_err(format!(
                "{} eps symbols but {} probabilities",
                eps_support.len(),
                p_eps.len()
            )));
        }
        check_probs("eps", p_eps.iter().copied())?;
        Ok(NoiseSpec { eps_support, p_eps })
    }

    pub fn uniform(eps_support: Vec<String>) -> Result<Self> {
        let n = eps_support.len().max(1);
        NoiseSpec::new(eps_support, vec![1.0 / n as f64; n])
    }

    pub fn eps_support(&self) -> &[String] {
        &self.eps_support
    }

    pub fn p_eps(&self) -> &[f64] {
        &self.p_eps
    }

    pub fn entropy(&self) -> f64 {
        self.p_eps.iter().map(|&p| plogp(p)).sum()
    }
}

/// Explicit table for `g(eps, y) -> y'`; `table[e][j]` is the image of
/// `(eps_e, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap {
    table: Vec<Vec<String>>,
}

impl NoiseMap {
    pub fn new(table: Vec<Vec<String>>) -> Self {
        NoiseMap { table }
    }

    /// Tabulates `g` over the given supports.
    pub fn from_fn(
        noise: &NoiseSpec,
        joint: &FiniteJoint,
        g: impl Fn(&str, &str) -> String,
    ) -> Self {
        let table = noise
            .eps_support
            .iter()
            .map(|e| joint.y_support.iter().map(|y| g(e, y)).collect())
            .collect();
        NoiseMap { table }
    }

    pub fn table(&self) -> &[Vec<String>] {
        &self.table
    }

    fn check(&self, j: &FiniteJoint, n: &NoiseSpec) -> Result<()> {
        if self.table.len() != n.eps_support.len()
            || self.table.iter().any(|r| r.len() != j.y_support.len())
        {
            return Err(dist_err(format!(
                "g must be a {}x{} table over eps x y",
                n.eps_support.len(),
                j.y_support.len()
            )));
        }
        Ok(())
    }
}

/// Joint of `(X, Y')` with `Y' = g(eps, Y)`, plus whether
/// `(eps, x, y) -> (x, y')` is one-to-one on the positive-mass support.
/// `Y'` symbols are listed in order of first appearance in `g`'s table.
pub fn augment_joint(j: &FiniteJoint, n: &NoiseSpec, g: &NoiseMap) -> Result<(FiniteJoint, bool)> {
    g.check(j, n)?;
    let mut y_out: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for sym in g.table.iter().flatten() {
        if !index.contains_key(sym.as_str()) {
            index.insert(sym, y_out.len());
            y_out.push(sym.clone());
        }
    }
    let mut p = vec![vec![0.0; y_out.len()]; j.x_support.len()];
    let mut injective = true;
    for (xi, row) in j.p.iter().enumerate() {
        let mut hit = vec![false; y_out.len()];
        for (e, &pe) in n.p_eps.iter().enumerate() {
            for (yi, &pxy) in row.iter().enumerate() {
                let mass = pe * pxy;
                if mass <= 0.0 {
                    continue;
                }
                let k = index[g.table[e][yi].as_str()];
                injective &= !std::mem::replace(&mut hit[k], true);
                p[xi][k] += mass;
            }
        }
    }
    let joint = FiniteJoint {
        x_support: j.x_support.clone(),
        y_support: y_out,
        p,
    };
    Ok((joint, injective))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Pass,
    NotApplicable,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::NotApplicable => "NOT-APPLICABLE",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h_y_given_x: f64,
    pub h_eps: f64,
    pub h_yprime_given_x: f64,
    pub injective: bool,
    /// `H(Y'|X) - H(Y|X)`.
    pub increase: f64,
    /// `H(Y'|X) - H(Y|X) - H(eps)`.
    pub gap: f64,
    pub verdict: Verdict,
}

impl fmt::Display for EntropyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "H(Y|X)    = {:.12} bits", self.h_y_given_x)?;
        writeln!(f, "H(eps)    = {:.12} bits", self.h_eps)?;
        writeln!(f, "H(Y'|X)   = {:.12} bits", self.h_yprime_given_x)?;
        writeln!(f, "injective = {}", self.injective)?;
        writeln!(f, "increase  = {:.3e}", self.increase)?;
        writeln!(f, "gap       = {:.3e}", self.gap)?;
        write!(f, "verdict   = {}", self.verdict)
    }
}

/// Checks `H(Y'|X) = H(Y|X) + H(eps)` when the augmentation is injective;
/// otherwise reports the measured gap as NOT-APPLICABLE.
pub fn verify_theorem1(j: &FiniteJoint, n: &NoiseSpec, g: &NoiseMap) -> Result<EntropyReport> {
    let (aug, injective) = augment_joint(j, n, g)?;
    let h = j.conditional_entropy();
    let h_eps = n.entropy();
    let h_prime = aug.conditional_entropy();
    let gap = h_prime - h - h_eps;
    let verdict = match injective {
        true if gap.abs() < ENTROPY_TOL => Verdict::Pass,
        true => Verdict::Fail,
        false => Verdict::NotApplicable,
    };
    Ok(EntropyReport {
        h_y_given_x: h,
        h_eps,
        h_yprime_given_x: h_prime,
        injective,
        increase: h_prime - h,
        gap,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeChange {
    Preserving,
    Increasing,
    Decreasing,
}

pub fn classify_augmentation(j: &FiniteJoint, n: &NoiseSpec, g: &NoiseMap) -> Result<CeChange> {
    let (aug, _) = augment_joint(j, n, g)?;
    let delta = aug.conditional_entropy() - j.conditional_entropy();
    Ok(if delta > ENTROPY_TOL {
        CeChange::Increasing
    } else if delta < -ENTROPY_TOL {
        CeChange::Decreasing
    } else {
        CeChange::Preserving
    })
}

/// Uniform noise over all permutations of `y_support`, with
/// `g(pi, y) = pi(y)`. Key symbols spell out the permuted order.
pub fn label_permutation_noise(y_support: &[String]) -> Result<(NoiseSpec, Vec<Vec<usize>>)> {
    if y_support.len() > 7 {
        return Err(dist_err(
            "label permutation enumeration is limited to 7 labels",
        ));
    }
    let mut perms: Vec<Vec<usize>> = vec![vec![]];
    for k in 0..y_support.len() {
        perms = perms
            .into_iter()
            .flat_map(|p| {
                (0..=k).map(move |pos| {
                    let mut q = p.clone();
                    q.insert(pos, k);
                    q
                })
            })
            .collect();
    }
    perms.sort();
    let names = perms
        .iter()
        .map(|p| {
            p.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    Ok((NoiseSpec::uniform(names)?, perms))
}

/// Label permutation as a [`NoiseMap`] over `j`.
pub fn label_permutation_map(j: &FiniteJoint) -> Result<(NoiseSpec, NoiseMap)> {
    let (noise, perms) = label_permutation_noise(&j.y_support)?;
    let table = perms
        .iter()
        .map(|p| p.iter().map(|&k| j.y_support[k].clone()).collect())
        .collect();
    Ok((noise, NoiseMap::new(table)))
}

/// A joint, a noise distribution and a noise map.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyInstance {
    pub joint: FiniteJoint,
    pub noise: NoiseSpec,
    pub map: NoiseMap,
}

impl EntropyInstance {
    pub fn verify(&self) -> Result<EntropyReport> {
        verify_theorem1(&self.joint, &self.noise, &self.map)
    }
}

fn symbols(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Normalized weights bounded away from zero, with each entry zeroed with
/// probability `zero_rate` (at least one entry stays positive).
fn random_probs<R: Rng + ?Sized>(n: usize, zero_rate: f64, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(zero_rate) {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Random instance whose map is injective on the positive-mass support
/// (`injective = true`) or has a collision there (`injective = false`).
/// Non-injective instances always have at least two noise symbols.
pub fn random_instance<R: Rng + ?Sized>(injective: bool, rng: &mut R) -> EntropyInstance {
    loop {
        let nx = rng.random_range(1..=4);
        let ny = rng.random_range(1..=4);
        let ne = rng.random_range(if injective { 1 } else { 2 }..=4);
        let flat = random_probs(nx * ny, 0.2, rng);
        let p = flat.chunks(ny).map(|c| c.to_vec()).collect();
        let joint = FiniteJoint::new(symbols("x", nx), symbols("y", ny), p).expect("valid joint");
        let noise = NoiseSpec::new(symbols("e", ne), random_probs(ne, 0.0, rng)).expect("valid");
        let table = if injective {
            let mut codes: Vec<usize> = (0..ne * ny + rng.random_range(0..3)).collect();
            codes.shuffle(rng);
            (0..ne)
                .map(|e| (0..ny).map(|y| format!("v{}", codes[e * ny + y])).collect())
                .collect()
        } else {
            let m = rng.random_range(1..(ne * ny).max(2));
            (0..ne)
                .map(|_| {
                    (0..ny)
                        .map(|_| format!("v{}", rng.random_range(0..m)))
                        .collect()
                })
                .collect()
        };
        let map = NoiseMap::new(table);
        let (_, flag) = augment_joint(&joint, &noise, &map).expect("consistent shapes");
        if flag == injective {
            return EntropyInstance { joint, noise, map };
        }
    }
}

/// On-disk description of an [`EntropyInstance`].
///
/// ```toml
/// x = ["a", "b"]
/// y = ["0", "1"]
/// p = [[0.25, 0.25], [0.25, 0.25]]
/// eps = ["0", "1"]
/// p_eps = [0.5, 0.5]
/// g = [["0", "1"], ["2", "3"]]   # one row per eps symbol, one column per y symbol
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySpecFile {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub p: Vec<Vec<f64>>,
    pub eps: Vec<String>,
    pub p_eps: Vec<f64>,
    pub g: Vec<Vec<String>>,
}

impl EntropySpecFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn instance(&self) -> Result<EntropyInstance> {
        let invalid = |e: Error| Error::InvalidSpec(e.to_string());
        let joint =
            FiniteJoint::new(self.x.clone(), self.y.clone(), self.p.clone()).map_err(invalid)?;
        let noise = NoiseSpec::new(self.eps.clone(), self.p_eps.clone()).map_err(invalid)?;
        let map = NoiseMap::new(self.g.clone());
        map.check(&joint, &noise).map_err(invalid)?;
        Ok(EntropyInstance { joint, noise, map })
    }

    pub fn from_instance(inst: &EntropyInstance) -> Self {
        EntropySpecFile {
            x: inst.joint.x_support.clone(),
            y: inst.joint.y_support.clone(),
            p: inst.joint.p.clone(),
            eps: inst.noise.eps_support.clone(),
            p_eps: inst.noise.p_eps.clone(),
            g: inst.map.table.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn syms(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn binary_joint(p: [[f64; 2]; 2]) -> FiniteJoint {
        FiniteJoint::new(
            syms(&["0", "1"]),
            syms(&["0", "1"]),
            p.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    fn coin() -> NoiseSpec {
        NoiseSpec::uniform(syms(&["0", "1"])).unwrap()
    }

    fn int_map(n: &NoiseSpec, j: &FiniteJoint, f: impl Fn(i64, i64) -> i64) -> NoiseMap {
        NoiseMap::from_fn(n, j, |e, y| {
            f(e.parse().unwrap(), y.parse().unwrap()).to_string()
        })
    }

    /// Brute-force `H(Y|X)` from `p(y|x)` directly.
    fn oracle_conditional_entropy(p: &[Vec<f64>]) -> f64 {
        let mut h = 0.0;
        for row in p {
            let px: f64 = row.iter().sum();
            if px == 0.0 {
                continue;
            }
            let mut hx = 0.0;
            for &v in row {
                if v > 0.0 {
                    let c = v / px;
                    hx -= c * c.log2();
                }
            }
            h += px * hx;
        }
        h
    }

    #[test]
    fn deterministic_y_has_zero_entropy() {
        let j = binary_joint([[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(j.conditional_entropy(), 0.0);
    }

    #[test]
    fn uniform_square_is_one_bit() {
        let j = binary_joint([[0.25, 0.25], [0.25, 0.25]]);
        assert!((j.conditional_entropy() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_table_matches_oracle() {
        let j = binary_joint([[0.3, 0.1], [0.2, 0.4]]);
        let want = oracle_conditional_entropy(j.p());
        // 0.4 * H(3/4) + 0.6 * H(1/3).
        assert!((want - 0.875_488_750_216_347).abs() < 1e-12, "{want}");
        assert!((j.conditional_entropy() - want).abs() < 1e-15);
    }

    #[test]
    fn invalid_distributions_rejected() {
        let bad = |p: Vec<Vec<f64>>| FiniteJoint::new(syms(&["a"]), syms(&["0", "1"]), p).is_err();
        assert!(bad(vec![vec![0.5, 0.6]]));
        assert!(bad(vec![vec![1.5, -0.5]]));
        assert!(bad(vec![vec![1.0]]));
        assert!(
            FiniteJoint::new(syms(&["a", "a"]), syms(&["0"]), vec![vec![0.5], vec![0.5]]).is_err()
        );
        assert!(NoiseSpec::new(syms(&["e"]), vec![0.9]).is_err());
    }

    #[test]
    fn ignoring_noise_keeps_joint() {
        let j = binary_joint([[0.3, 0.1], [0.2, 0.4]]);
        let (aug, inj) = augment_joint(&j, &coin(), &int_map(&coin(), &j, |_, y| y)).unwrap();
        assert!(!inj);
        assert_eq!(aug, j);
        assert_eq!(
            classify_augmentation(&j, &coin(), &int_map(&coin(), &j, |_, y| y)).unwrap(),
            CeChange::Preserving
        );
    }

    #[test]
    fn shifted_coin_adds_one_bit() {
        let j = binary_joint([[0.25, 0.25], [0.25, 0.25]]);
        let g = int_map(&coin(), &j, |e, y| y + 2 * e);
        let (aug, inj) = augment_joint(&j, &coin(), &g).unwrap();
        assert!(inj);
        assert_eq!(aug.y_support(), syms(&["0", "1", "2", "3"]).as_slice());
        assert!((aug.conditional_entropy() - 2.0).abs() < 1e-12);
        let r = verify_theorem1(&j, &coin(), &g).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.gap.abs() < 1e-9);
        assert_eq!(
            classify_augmentation(&j, &coin(), &g).unwrap(),
            CeChange::Increasing
        );
    }

    #[test]
    fn xor_is_not_applicable() {
        let j = binary_joint([[0.25, 0.25], [0.25, 0.25]]);
        let g = int_map(&coin(), &j, |e, y| e ^ y);
        let r = verify_theorem1(&j, &coin(), &g).unwrap();
        assert!(!r.injective);
        assert_eq!(r.verdict, Verdict::NotApplicable);
        assert!((r.h_yprime_given_x - 1.0).abs() < 1e-12);
        assert!(r.increase.abs() < 1e-12);
        assert!(r.increase < r.h_eps);
    }

    #[test]
    fn single_noise_symbol_passes_trivially() {
        let j = binary_joint([[0.3, 0.1], [0.2, 0.4]]);
        let n = NoiseSpec::uniform(syms(&["0"])).unwrap();
        let g = int_map(&n, &j, |_, y| y);
        let r = verify_theorem1(&j, &n, &g).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.h_eps, 0.0);
        assert_eq!(augment_joint(&j, &n, &g).unwrap().0, j);
    }

    #[test]
    fn collapsing_map_decreases() {
        let j = binary_joint([[0.25, 0.25], [0.25, 0.25]]);
        let n = NoiseSpec::uniform(syms(&["0"])).unwrap();
        let g = int_map(&n, &j, |_, _| 0);
        assert_eq!(
            classify_augmentation(&j, &n, &g).unwrap(),
            CeChange::Decreasing
        );
    }

    #[test]
    fn label_permutation_increases_unless_uniform() {
        let y = syms(&["a", "b", "c"]);
        let skewed = FiniteJoint::new(
            syms(&["x0", "x1"]),
            y.clone(),
            vec![vec![0.3, 0.1, 0.1], vec![0.1, 0.1, 0.3]],
        )
        .unwrap();
        let (n, g) = label_permutation_map(&skewed).unwrap();
        assert_eq!(n.eps_support().len(), 6);
        assert_eq!(
            classify_augmentation(&skewed, &n, &g).unwrap(),
            CeChange::Increasing
        );
        let (aug, _) = augment_joint(&skewed, &n, &g).unwrap();
        assert!((aug.conditional_entropy() - 3f64.log2()).abs() < 1e-12);

        let flat = FiniteJoint::new(syms(&["x0"]), y, vec![vec![1.0 / 3.0; 3]]).unwrap();
        let (n, g) = label_permutation_map(&flat).unwrap();
        assert_eq!(
            classify_augmentation(&flat, &n, &g).unwrap(),
            CeChange::Preserving
        );
    }

    #[test]
    fn spec_file_round_trip() {
        let text = r#"
x = ["a", "b"]
y = ["0", "1"]
p = [[0.25, 0.25], [0.25, 0.25]]
eps = ["0", "1"]
p_eps = [0.5, 0.5]
g = [["0", "1"], ["2", "3"]]
"#;
        let spec = EntropySpecFile::parse(text).unwrap();
        let inst = spec.instance().unwrap();
        assert_eq!(inst.verify().unwrap().verdict, Verdict::Pass);
        let again = EntropySpecFile::parse(&spec.to_toml().unwrap()).unwrap();
        assert_eq!(again, spec);
        let bad = text.replace(r#"["2", "3"]]"#, r#"["2"]]"#);
        assert!(matches!(
            EntropySpecFile::parse(&bad).unwrap().instance(),
            Err(Error::InvalidSpec(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn verdict_tracks_injectivity(seed in any::<u64>(), injective in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(injective, &mut rng);
            let r = inst.verify().unwrap();
            prop_assert_eq!(r.injective, injective);
            if injective {
                prop_assert_eq!(r.verdict, Verdict::Pass);
                prop_assert!(r.gap.abs() < 1e-9);
            } else {
                prop_assert_eq!(r.verdict, Verdict::NotApplicable);
                prop_assert!(r.increase < r.h_eps);
            }
            prop_assert!((inst.joint.conditional_entropy() - oracle_conditional_entropy(inst.joint.p())).abs() < 1e-12);
        }

        #[test]
        fn bijective_keys_never_decrease_entropy(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(true, &mut rng);
            // Keep y -> g(e, y) injective for each key while letting keys collide.
            let ny = inst.joint.y_support().len();
            let ne = inst.noise.eps_support().len();
            let table = (0..ne)
                .map(|_| {
                    let mut out: Vec<usize> = (0..ny + 1).collect();
                    out.shuffle(&mut rng);
                    out[..ny].iter().map(|v| format!("v{v}")).collect()
                })
                .collect();
            let (aug, _) = augment_joint(&inst.joint, &inst.noise, &NoiseMap::new(table)).unwrap();
            prop_assert!(aug.conditional_entropy() >= inst.joint.conditional_entropy() - 1e-12);
        }
    }
}
