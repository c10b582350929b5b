//! Multilayer perceptrons with explicit, named parameter lists.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, init_seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            activation,
            init_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::InvalidSpec(format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidSpec(format!(
                "duplicate parameter name {dup}"
            )));
        }
        Ok(ParamSet { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names, new tensors (shapes must match).
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != self.tensors.len()
            || tensors
                .iter()
                .zip(&self.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::InvalidSpec(
                "replacement tensors do not match parameter shapes".into(),
            ));
        }
        Ok(ParamSet {
            names: self.names.clone(),
            tensors,
        })
    }

    /// Tracked copies registered as leaves on `tape`.
    pub fn watch(&self, tape: &Tape) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| tape.watch(t)).collect(),
        }
    }

    pub fn detach(&self) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::detach).collect(),
        }
    }

    /// Concatenation of two parameter sets; names get the given prefixes.
    pub fn join(a: &ParamSet, a_prefix: &str, b: &ParamSet, b_prefix: &str) -> Result<Self> {
        let names = a
            .names
            .iter()
            .map(|n| format!("{a_prefix}{n}"))
            .chain(b.names.iter().map(|n| format!("{b_prefix}{n}")))
            .collect();
        let tensors = a.tensors.iter().chain(&b.tensors).cloned().collect();
        ParamSet::new(names, tensors)
    }

    /// Splits off the first `n` tensors.
    pub fn split_at(&self, n: usize) -> (ParamSet, ParamSet) {
        let (na, nb) = self.names.split_at(n);
        let (ta, tb) = self.tensors.split_at(n);
        (
            ParamSet {
                names: na.to_vec(),
                tensors: ta.to_vec(),
            },
            ParamSet {
                names: nb.to_vec(),
                tensors: tb.to_vec(),
            },
        )
    }

    /// Writes the checkpoint: one JSON header line with names and shapes,
    /// then every value as little-endian `f64` in parameter order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            names: self.names.clone(),
            shapes: self.tensors.iter().map(|t| t.shape().to_vec()).collect(),
        };
        let mut out = Vec::with_capacity(self.num_values() * 8 + 128);
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.names.len() != header.shapes.len() {
            return Err(Error::Checkpoint(
                "names and shapes differ in length".into(),
            ));
        }
        let mut body = Vec::new();
        reader.read_to_end(&mut body)?;
        let total: usize = header
            .shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum();
        if body.len() != total * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes of values, found {}",
                total * 8,
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let tensors = header
            .shapes
            .iter()
            .map(|s| {
                let n = s.iter().product();
                Tensor::new(s.clone(), values.by_ref().take(n).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSet::new(header.names, tensors)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

/// Std of a unit normal truncated to [-2, 2].
const TRUNCATED_STD: f64 = 0.879_625_661_034_239_8;

/// Weights drawn from a normal truncated at two standard deviations and
/// rescaled so the sampled std is `sqrt(2 / fan_in)`; biases zero. Weight shape is `[fan_in, fan_out]`,
/// bias shape `[1, fan_out]`.
pub fn init(spec: &MlpSpec) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (layer, w) in spec.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / fan_in as f64).sqrt() / TRUNCATED_STD;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let weights = (0..fan_in * fan_out)
            .map(|_| loop {
                let z: f64 = normal.sample(&mut rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
            .collect();
        names.push(format!("layer{layer}.weight"));
        tensors.push(Tensor::new(vec![fan_in, fan_out], weights)?);
        names.push(format!("layer{layer}.bias"));
        tensors.push(Tensor::zeros(&[1, fan_out]));
    }
    ParamSet::new(names, tensors)
}

/// Standard MLP forward pass; the activation is applied after every layer
/// except the last.
pub fn forward(params: &ParamSet, spec: &MlpSpec, x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || x.shape()[1] != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "mlp_forward",
            lhs: x.shape().to_vec(),
            rhs: vec![x.rows(), spec.input_dim()],
        });
    }
    if params.len() != 2 * spec.num_layers() {
        return Err(Error::InvalidSpec(format!(
            "spec has {} layers but {} parameter tensors were given",
            spec.num_layers(),
            params.len()
        )));
    }
    let mut h = x.clone();
    let last = spec.num_layers() - 1;
    for layer in 0..spec.num_layers() {
        let w = &params.tensors[2 * layer];
        let b = &params.tensors[2 * layer + 1];
        h = h.matmul(w)?.add_broadcast(b)?;
        if layer < last {
            h = match spec.activation {
                Activation::Relu => h.relu()?,
                Activation::Tanh => h.tanh()?,
            };
        }
    }
    Ok(h)
}
