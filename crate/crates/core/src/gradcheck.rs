//! Finite-difference verification of the tape's gradients.
//!
//! Every check compares the tape against central differences with step
//! [`FD_STEP`] using `|g_ad - g_fd| / max(1, |g_fd|)`. The second-order MAML
//! check evaluates the composed meta-objective with a hand-written MLP
//! forward/backward pass, so it does not share code with the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{self, Activation, MlpSpec, ParamSet};
use crate::tensor::{grad, no_record, Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const SECOND_ORDER_TOL: f64 = 1e-3;

pub const PRIMITIVES: &[&str] = &[
    "add",
    "mul",
    "matmul",
    "relu",
    "tanh",
    "sum",
    "mean",
    "square",
    "exp",
    "log",
    "softmax_cross_entropy",
    "gather",
    "concat",
    "broadcast",
];

/// Name of the composed second-order check.
pub const MAML_CHECK: &str = "maml_second_order";

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, max_rel_err: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            max_rel_err,
            tolerance,
            passed: max_rel_err < tolerance,
        }
    }
}

pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / fd.abs().max(1.0)
}

type OpFn = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

struct Case {
    inputs: Vec<Tensor>,
    f: OpFn,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("shape matches")
}

/// Values bounded away from zero, for the relu kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn cases(name: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let unary = |inputs: Vec<Tensor>, f: fn(&Tensor) -> Result<Tensor>| Case {
        inputs,
        f: Box::new(move |x: &[Tensor]| f(&x[0])),
    };
    let c = match name {
        "add" => vec![Case {
            inputs: vec![
                uniform(rng, &[3, 4], -1.0, 1.0),
                uniform(rng, &[3, 4], -1.0, 1.0),
            ],
            f: Box::new(|x| x[0].add(&x[1])),
        }],
        "mul" => vec![Case {
            inputs: vec![
                uniform(rng, &[3, 4], -1.0, 1.0),
                uniform(rng, &[3, 4], -1.0, 1.0),
            ],
            f: Box::new(|x| x[0].mul(&x[1])),
        }],
        "matmul" => [(false, false), (true, false), (false, true), (true, true)]
            .into_iter()
            .map(|(ta, tb)| {
                let a_shape = if ta { [4, 3] } else { [3, 4] };
                let b_shape = if tb { [2, 4] } else { [4, 2] };
                Case {
                    inputs: vec![
                        uniform(rng, &a_shape, -1.0, 1.0),
                        uniform(rng, &b_shape, -1.0, 1.0),
                    ],
                    f: Box::new(move |x: &[Tensor]| x[0].matmul_t(&x[1], ta, tb)),
                }
            })
            .collect(),
        "relu" => vec![unary(vec![off_zero(rng, &[3, 4])], Tensor::relu)],
        "tanh" => vec![unary(vec![uniform(rng, &[3, 4], -1.5, 1.5)], Tensor::tanh)],
        "square" => vec![unary(
            vec![uniform(rng, &[3, 4], -1.5, 1.5)],
            Tensor::square,
        )],
        "exp" => vec![unary(vec![uniform(rng, &[3, 4], -1.0, 1.0)], Tensor::exp)],
        "log" => vec![unary(vec![uniform(rng, &[3, 4], 0.5, 2.0)], Tensor::log)],
        "sum" | "mean" => {
            let mean = name == "mean";
            [vec![], vec![1, 4], vec![3, 1], vec![4]]
                .into_iter()
                .map(|to| Case {
                    inputs: vec![uniform(rng, &[3, 4], -1.0, 1.0)],
                    f: Box::new(move |x: &[Tensor]| {
                        if mean {
                            x[0].mean_to(&to)
                        } else {
                            x[0].sum_to(&to)
                        }
                    }),
                })
                .collect()
        }
        "softmax_cross_entropy" => {
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            vec![Case {
                inputs: vec![uniform(rng, &[4, 5], -2.0, 2.0)],
                f: Box::new(move |x| x[0].softmax_cross_entropy(&labels)),
            }]
        }
        "gather" => vec![Case {
            inputs: vec![uniform(rng, &[5, 3], -1.0, 1.0)],
            f: Box::new(|x| x[0].gather(&[4, 0, 4, 2])),
        }],
        "concat" => vec![
            Case {
                inputs: vec![
                    uniform(rng, &[2, 3], -1.0, 1.0),
                    uniform(rng, &[4, 3], -1.0, 1.0),
                ],
                f: Box::new(|x| Tensor::concat(&[&x[0], &x[1]], 0)),
            },
            Case {
                inputs: vec![
                    uniform(rng, &[3, 2], -1.0, 1.0),
                    uniform(rng, &[3, 1], -1.0, 1.0),
                    uniform(rng, &[3, 3], -1.0, 1.0),
                ],
                f: Box::new(|x| Tensor::concat(&[&x[0], &x[1], &x[2]], 1)),
            },
        ],
        "broadcast" => [
            (vec![1, 4], vec![3, 4]),
            (vec![3, 1], vec![3, 4]),
            (vec![], vec![2, 2]),
            (vec![4], vec![2, 4]),
        ]
        .into_iter()
        .map(|(from, to)| Case {
            inputs: vec![uniform(rng, &from, -1.0, 1.0)],
            f: Box::new(move |x: &[Tensor]| x[0].broadcast_to(&to)),
        })
        .collect(),
        other => {
            return Err(Error::invalid(
                "gradcheck",
                format!(
                    "unknown primitive {other}; known: {}",
                    PRIMITIVES.join(", ")
                ),
            ))
        }
    };
    Ok(c)
}

/// `sum(f(x) * w)` for a fixed random projection `w`.
fn projected(f: &OpFn, x: &[Tensor], w: &Tensor) -> Result<Tensor> {
    f(x)?.mul(w)?.sum()
}

fn projection_for(case: &Case, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let out = {
        let _g = no_record();
        (case.f)(&case.inputs)?
    };
    Ok(uniform(rng, out.shape(), -1.0, 1.0))
}

fn perturbed(inputs: &[Tensor], which: usize, elem: usize, delta: f64) -> Vec<Tensor> {
    let mut out = inputs.to_vec();
    let t = &inputs[which];
    let mut data = t.data().to_vec();
    data[elem] += delta;
    out[which] = Tensor::new(t.shape().to_vec(), data).expect("same shape");
    out
}

/// Central difference of `objective` with respect to every input element.
fn finite_difference(
    inputs: &[Tensor],
    objective: impl Fn(&[Tensor]) -> Result<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let mut g = Vec::with_capacity(t.len());
        for e in 0..t.len() {
            let plus = objective(&perturbed(inputs, i, e, FD_STEP))?;
            let minus = objective(&perturbed(inputs, i, e, -FD_STEP))?;
            g.push((plus - minus) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    Ok(out)
}

fn max_err(ad: &[Tensor], fd: &[Vec<f64>]) -> f64 {
    ad.iter()
        .zip(fd)
        .flat_map(|(a, f)| a.data().iter().zip(f).map(|(&x, &y)| rel_err(x, y)))
        .fold(0.0, f64::max)
}

/// First-order check of one primitive over all its shape variants.
pub fn check_primitive(name: &str, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in cases(name, &mut rng)? {
        let w = projection_for(&case, &mut rng)?;
        let ad = {
            let tape = Tape::new();
            let xs: Vec<Tensor> = case.inputs.iter().map(|t| tape.watch(t)).collect();
            let loss = projected(&case.f, &xs, &w)?;
            grad(&loss, &xs, false)?.values
        };
        let fd = {
            let _g = no_record();
            finite_difference(&case.inputs, |x| Ok(projected(&case.f, x, &w)?.item()))?
        };
        worst = worst.max(max_err(&ad, &fd));
    }
    Ok(CheckResult::new(name, worst, FIRST_ORDER_TOL))
}

/// Gradient-of-gradient check of one primitive: differentiates
/// `sum(grad(x) * v)` on the tape and compares with central differences of
/// the first-order tape gradient.
pub fn check_primitive_second_order(name: &str, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for case in cases(name, &mut rng)? {
        let w = projection_for(&case, &mut rng)?;
        let vs: Vec<Tensor> = case
            .inputs
            .iter()
            .map(|t| uniform(&mut rng, t.shape(), -1.0, 1.0))
            .collect();
        let gv = |xs: &[Tensor], create_graph: bool| -> Result<Tensor> {
            let loss = projected(&case.f, xs, &w)?;
            let g = grad(&loss, xs, create_graph)?;
            let mut acc = Tensor::scalar(0.0);
            for (gi, v) in g.values.iter().zip(&vs) {
                acc = acc.add(&gi.mul(v)?.sum()?)?;
            }
            Ok(acc)
        };
        let ad = {
            let tape = Tape::new();
            let xs: Vec<Tensor> = case.inputs.iter().map(|t| tape.watch(t)).collect();
            let obj = gv(&xs, true)?;
            let g = grad(&obj, &xs, false)?;
            // Purely linear primitives have an identically zero second derivative.
            g.values
        };
        let fd = finite_difference(&case.inputs, |x| {
            let tape = Tape::new();
            let xs: Vec<Tensor> = x.iter().map(|t| tape.watch(t)).collect();
            Ok(gv(&xs, false)?.item())
        })?;
        worst = worst.max(max_err(&ad, &fd));
    }
    Ok(CheckResult::new(
        format!("{name} (second order)"),
        worst,
        FIRST_ORDER_TOL,
    ))
}

/// Plain-`f64` two-layer tanh network used as an independent oracle.
struct RefMlp {
    input: usize,
    hidden: usize,
}

impl RefMlp {
    fn unpack<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], f64) {
        let (w1, rest) = theta.split_at(self.input * self.hidden);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        (w1, b1, w2, rest[0])
    }

    /// Mean squared error and its gradient with respect to `theta`.
    fn loss_and_grad(&self, theta: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>) {
        let (w1, b1, w2, b2) = self.unpack(theta);
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let mut g = vec![0.0; theta.len()];
        let (b1_at, w2_at, b2_at) = (
            self.input * self.hidden,
            self.input * self.hidden + self.hidden,
            self.input * self.hidden + 2 * self.hidden,
        );
        for (x, &y) in xs.iter().zip(ys) {
            let z: Vec<f64> = (0..self.hidden)
                .map(|j| {
                    let a: f64 = b1[j]
                        + (0..self.input)
                            .map(|i| x[i] * w1[i * self.hidden + j])
                            .sum::<f64>();
                    a.tanh()
                })
                .collect();
            let out = b2 + (0..self.hidden).map(|j| z[j] * w2[j]).sum::<f64>();
            let r = out - y;
            loss += r * r / n;
            let dout = 2.0 * r / n;
            for j in 0..self.hidden {
                g[w2_at + j] += dout * z[j];
                let da = dout * w2[j] * (1.0 - z[j] * z[j]);
                g[b1_at + j] += da;
                for i in 0..self.input {
                    g[i * self.hidden + j] += x[i] * da;
                }
            }
            g[b2_at] += dout;
        }
        (loss, g)
    }
}

/// Meta-gradient of `L_query(theta - alpha * grad L_support(theta))` on a
/// two-layer tanh MLP, tape (create_graph) versus finite differences of the
/// composed function evaluated by the reference network.
pub fn check_maml_second_order(seed: u64) -> Result<CheckResult> {
    let (input, hidden, alpha) = (2usize, 6usize, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MlpSpec::new(vec![input, hidden, 1], Activation::Tanh, seed)?;
    let init = models::init(&spec)?;
    // Perturb the zero biases so every parameter matters.
    let params = init.with_tensors(
        init.tensors()
            .iter()
            .map(|t| {
                let data = t
                    .data()
                    .iter()
                    .map(|v| v + rng.random_range(-0.3..0.3))
                    .collect();
                Tensor::new(t.shape().to_vec(), data)
            })
            .collect::<Result<_>>()?,
    )?;
    let sample = |rng: &mut ChaCha8Rng, n: usize| -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..input).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let ys = xs.iter().map(|x| (x[0] - 0.5 * x[1]).sin()).collect();
        (xs, ys)
    };
    let (xs_s, ys_s) = sample(&mut rng, 5);
    let (xs_q, ys_q) = sample(&mut rng, 5);

    let ad: Vec<f64> = {
        let tape = Tape::new();
        let theta = params.watch(&tape);
        let x_s = Tensor::from_rows(&xs_s)?;
        let y_s = Tensor::column(&ys_s);
        let x_q = Tensor::from_rows(&xs_q)?;
        let y_q = Tensor::column(&ys_q);
        let support = models::forward(&theta, &spec, &x_s)?.mse(&y_s)?;
        let g = grad(&support, theta.tensors(), true)?;
        let adapted: Vec<Tensor> = theta
            .tensors()
            .iter()
            .zip(&g.values)
            .map(|(p, gp)| p.sub(&gp.scale(alpha)?))
            .collect::<Result<_>>()?;
        let adapted = theta.with_tensors(adapted)?;
        let query = models::forward(&adapted, &spec, &x_q)?.mse(&y_q)?;
        let meta = grad(&query, theta.tensors(), false)?;
        meta.values.iter().flat_map(|t| t.data().to_vec()).collect()
    };

    let reference = RefMlp { input, hidden };
    let flat = flatten(&params);
    let composed = |theta: &[f64]| -> f64 {
        let (_, g) = reference.loss_and_grad(theta, &xs_s, &ys_s);
        let adapted: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - alpha * gi).collect();
        reference.loss_and_grad(&adapted, &xs_q, &ys_q).0
    };
    let mut worst: f64 = 0.0;
    for (i, &a) in ad.iter().enumerate() {
        let mut plus = flat.clone();
        plus[i] += FD_STEP;
        let mut minus = flat.clone();
        minus[i] -= FD_STEP;
        let fd = (composed(&plus) - composed(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(a, fd));
    }
    Ok(CheckResult::new(MAML_CHECK, worst, SECOND_ORDER_TOL))
}

fn flatten(p: &ParamSet) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

/// Runs the named check (a primitive name or [`MAML_CHECK`]), or all of them.
pub fn run(op: Option<&str>, seed: u64) -> Result<Vec<CheckResult>> {
    match op {
        Some(MAML_CHECK) => Ok(vec![check_maml_second_order(seed)?]),
        Some(name) => Ok(vec![
            check_primitive(name, seed)?,
            check_primitive_second_order(name, seed)?,
        ]),
        None => {
            let mut out = Vec::new();
            for name in PRIMITIVES {
                out.push(check_primitive(name, seed)?);
                out.push(check_primitive_second_order(name, seed)?);
            }
            out.push(check_maml_second_order(seed)?);
            Ok(out)
        }
    }
}
