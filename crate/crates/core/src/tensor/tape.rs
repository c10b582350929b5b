use std::cell::{Cell, RefCell};
use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{kernels, numel, Handle, Primitive, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static STACK: RefCell<Vec<Frame>> = const { RefCell::new(Vec::new()) };
    static PAUSED: Cell<usize> = const { Cell::new(0) };
}

struct Frame {
    id: u64,
    nodes: Vec<Node>,
}

#[derive(Clone)]
struct Node {
    /// `None` marks a watched leaf.
    op: Option<Primitive>,
    inputs: Vec<Tensor>,
    output: Tensor,
}

/// A recording scope. Creating a tape makes it the innermost active tape on
/// the current thread; dropping it discards its nodes.
///
/// Tapes are thread-bound. Tensors themselves carry only a plain handle and
/// stay `Send`.
pub struct Tape {
    id: u64,
    _not_send: PhantomData<*const ()>,
}

impl Tape {
    pub fn new() -> Self {
        let id = NEXT_TAPE.fetch_add(1, Ordering::Relaxed);
        STACK.with(|s| {
            s.borrow_mut().push(Frame {
                id,
                nodes: Vec::new(),
            })
        });
        Tape {
            id,
            _not_send: PhantomData,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Registers `t` as a leaf on this tape and returns the tracked copy.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        STACK.with(|s| {
            let mut s = s.borrow_mut();
            let frame = s
                .iter_mut()
                .find(|f| f.id == self.id)
                .expect("tape is active while it is alive");
            let node = frame.nodes.len();
            let out = t.detach().with_handle(Handle {
                tape: self.id,
                node,
            });
            frame.nodes.push(Node {
                op: None,
                inputs: Vec::new(),
                output: out.clone(),
            });
            out
        })
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        STACK.with(|s| {
            s.borrow()
                .iter()
                .find(|f| f.id == self.id)
                .map_or(0, |f| f.nodes.len())
        })
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names of the recorded primitives in recording order (`"leaf"` for watched tensors).
    pub fn op_names(&self) -> Vec<&'static str> {
        STACK.with(|s| {
            s.borrow()
                .iter()
                .find(|f| f.id == self.id)
                .map(|f| {
                    f.nodes
                        .iter()
                        .map(|n| n.op.as_ref().map_or("leaf", Primitive::name))
                        .collect()
                })
                .unwrap_or_default()
        })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        STACK.with(|s| {
            let mut s = s.borrow_mut();
            if let Some(pos) = s.iter().rposition(|f| f.id == self.id) {
                s.remove(pos);
            }
        });
    }
}

/// Suspends recording on this thread while alive.
pub struct NoRecordGuard {
    _not_send: PhantomData<*const ()>,
}

pub fn no_record() -> NoRecordGuard {
    PAUSED.with(|p| p.set(p.get() + 1));
    NoRecordGuard {
        _not_send: PhantomData,
    }
}

impl Drop for NoRecordGuard {
    fn drop(&mut self) {
        PAUSED.with(|p| p.set(p.get() - 1));
    }
}

fn recording() -> bool {
    PAUSED.with(|p| p.get() == 0)
}

pub(super) fn push_node(op: Primitive, inputs: &[&Tensor], out: Tensor) -> Tensor {
    if !recording() || inputs.iter().all(|t| t.handle.is_none()) {
        return out;
    }
    STACK.with(|s| {
        let mut s = s.borrow_mut();
        let Some(frame) = s.iter_mut().rev().find(|f| {
            inputs
                .iter()
                .any(|t| t.handle.is_some_and(|h| h.tape == f.id))
        }) else {
            return out;
        };
        let node = frame.nodes.len();
        let out = out.with_handle(Handle {
            tape: frame.id,
            node,
        });
        frame.nodes.push(Node {
            op: Some(op),
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            output: out.clone(),
        });
        out
    })
}

fn node_at(tape: u64, index: usize) -> Option<Node> {
    STACK.with(|s| {
        s.borrow()
            .iter()
            .find(|f| f.id == tape)
            .and_then(|f| f.nodes.get(index).cloned())
    })
}

fn tape_active(tape: u64) -> bool {
    STACK.with(|s| s.borrow().iter().any(|f| f.id == tape))
}

/// Result of [`grad`]: one gradient per requested parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub values: Vec<Tensor>,
    /// `true` where the parameter was not reachable from the loss; the
    /// corresponding value is an explicit zero tensor.
    pub unreachable: Vec<bool>,
}

impl Gradients {
    pub fn any_unreachable(&self) -> bool {
        self.unreachable.iter().any(|&u| u)
    }
}

/// Reverse-mode gradient of a scalar `loss` with respect to `params`.
///
/// With `create_graph`, the backward computation is recorded on the loss's
/// tape and the returned gradients are tracked tensors that can be
/// differentiated again.
pub fn grad(loss: &Tensor, params: &[Tensor], create_graph: bool) -> Result<Gradients> {
    if numel(loss.shape()) != 1 {
        return Err(Error::NotScalar(loss.shape().to_vec()));
    }
    let zeros = |params: &[Tensor]| Gradients {
        values: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        unreachable: vec![true; params.len()],
    };
    let Some(root) = loss.handle.filter(|h| tape_active(h.tape)) else {
        return Ok(zeros(params));
    };
    let on_tape = |t: &Tensor| {
        t.handle
            .filter(|h| h.tape == root.tape && h.node <= root.node)
            .map(|h| h.node)
    };
    let Some(lo) = params.iter().filter_map(on_tape).min() else {
        return Ok(zeros(params));
    };

    let _pause = (!create_graph).then(no_record);
    let mut keep = vec![false; root.node - lo + 1];
    for p in params.iter().filter_map(on_tape) {
        keep[p - lo] = true;
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; root.node - lo + 1];
    grads[root.node - lo] = Some(Tensor::ones(loss.shape()));

    for i in (lo..=root.node).rev() {
        let Some(g) = grads[i - lo].clone() else {
            continue;
        };
        if !keep[i - lo] {
            grads[i - lo] = None;
        }
        let node = node_at(root.tape, i).expect("node index within tape");
        let Some(op) = node.op else {
            continue;
        };
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|t| {
                t.handle
                    .is_some_and(|h| h.tape == root.tape && h.node >= lo)
            })
            .collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let contribs = backward(&op, &node.inputs, &node.output, &g, &needs)?;
        for (input, contrib) in node.inputs.iter().zip(contribs) {
            let Some(c) = contrib else { continue };
            let j = input.handle.expect("needed input is tracked").node - lo;
            grads[j] = Some(match grads[j].take() {
                None => c,
                Some(prev) => prev.add(&c)?,
            });
        }
    }

    let mut values = Vec::with_capacity(params.len());
    let mut unreachable = Vec::with_capacity(params.len());
    for p in params {
        match on_tape(p).and_then(|n| grads[n - lo].clone()) {
            Some(g) => {
                values.push(g);
                unreachable.push(false);
            }
            None => {
                values.push(Tensor::zeros(p.shape()));
                unreachable.push(true);
            }
        }
    }
    Ok(Gradients {
        values,
        unreachable,
    })
}

fn constant(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_parts(shape.to_vec(), data)
}

/// Vector-Jacobian products for one node. Written with primitives so the
/// computation is itself recorded when the caller asked for `create_graph`.
fn backward(
    op: &Primitive,
    inputs: &[Tensor],
    output: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let need = |i: usize| needs.get(i).copied().unwrap_or(false);
    let rec = recording();
    let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
    match op {
        Primitive::Add => {
            for (i, slot) in out.iter_mut().enumerate() {
                if need(i) {
                    *slot = Some(g.clone());
                }
            }
        }
        Primitive::Mul => {
            if need(0) {
                out[0] = Some(g.mul(&inputs[1])?);
            }
            if need(1) {
                out[1] = Some(g.mul(&inputs[0])?);
            }
        }
        Primitive::Matmul { trans_a, trans_b } => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let (ta, tb) = (*trans_a, *trans_b);
            if need(0) {
                out[0] = Some(if ta {
                    b.matmul_t(g, tb, true)?
                } else {
                    g.matmul_t(b, false, !tb)?
                });
            }
            if need(1) {
                out[1] = Some(if tb {
                    g.matmul_t(a, true, ta)?
                } else {
                    a.matmul_t(g, !ta, false)?
                });
            }
        }
        Primitive::Relu => {
            let a = &inputs[0];
            let mask = a
                .data()
                .iter()
                .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
                .collect();
            out[0] = Some(g.mul(&constant(a.shape(), mask))?);
        }
        Primitive::Tanh => {
            let one_minus_sq = Tensor::ones(output.shape()).sub(&output.square()?)?;
            out[0] = Some(g.mul(&one_minus_sq)?);
        }
        Primitive::Sum { .. } => {
            out[0] = Some(g.broadcast_to(inputs[0].shape())?);
        }
        Primitive::Mean { to } => {
            let a = &inputs[0];
            let count = (numel(a.shape()) / numel(to).max(1)) as f64;
            out[0] = Some(g.broadcast_to(a.shape())?.scale(1.0 / count)?);
        }
        Primitive::Square => {
            out[0] = Some(g.mul(&inputs[0].scale(2.0)?)?);
        }
        Primitive::Exp => {
            out[0] = Some(g.mul(output)?);
        }
        Primitive::Log => {
            let a = &inputs[0];
            let recip = if rec {
                // 1/a = exp(-log a), differentiable through the tape.
                a.log()?.neg()?.exp()?
            } else {
                constant(a.shape(), a.data().iter().map(|x| 1.0 / x).collect())
            };
            out[0] = Some(g.mul(&recip)?);
        }
        Primitive::SoftmaxCrossEntropy { labels } => {
            out[0] = Some(softmax_ce_backward(&inputs[0], labels, g, rec)?);
        }
        Primitive::Gather { indices } => {
            let a = &inputs[0];
            let rows = a.shape()[0];
            let width = numel(&a.shape()[1..]);
            if rec && a.shape().len() == 2 {
                let mut sel = vec![0.0; indices.len() * rows];
                for (r, &i) in indices.iter().enumerate() {
                    sel[r * rows + i] = 1.0;
                }
                let sel = constant(&[indices.len(), rows], sel);
                out[0] = Some(sel.matmul_t(g, true, false)?);
            } else {
                let mut acc = vec![0.0; rows * width];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..width {
                        acc[i * width + c] += g.data()[r * width + c];
                    }
                }
                out[0] = Some(constant(a.shape(), acc));
            }
        }
        Primitive::Concat { axis } => {
            let total: usize = inputs.iter().map(|t| t.shape()[*axis]).sum();
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let len = t.shape()[*axis];
                if need(i) {
                    out[i] = Some(slice_grad(g, *axis, offset, len, total, rec)?);
                }
                offset += len;
            }
        }
        Primitive::Broadcast { .. } => {
            out[0] = Some(g.sum_to(inputs[0].shape())?);
        }
    }
    Ok(out)
}

fn slice_grad(
    g: &Tensor,
    axis: usize,
    offset: usize,
    len: usize,
    total: usize,
    rec: bool,
) -> Result<Tensor> {
    if rec {
        let mut sel = vec![0.0; len * total];
        if axis == 0 {
            for r in 0..len {
                sel[r * total + offset + r] = 1.0;
            }
            constant(&[len, total], sel).matmul(g)
        } else {
            for c in 0..len {
                sel[(offset + c) * len + c] = 1.0;
            }
            g.matmul(&constant(&[total, len], sel))
        }
    } else if axis == 0 {
        let cols = g.shape()[1];
        let data = g.data()[offset * cols..(offset + len) * cols].to_vec();
        Ok(constant(&[len, cols], data))
    } else {
        let rows = g.shape()[0];
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&g.row(r)[offset..offset + len]);
        }
        Ok(constant(&[rows, len], data))
    }
}

fn softmax_ce_backward(z: &Tensor, labels: &[usize], g: &Tensor, rec: bool) -> Result<Tensor> {
    let (rows, classes) = (z.shape()[0], z.shape()[1]);
    let inv_rows = 1.0 / rows as f64;
    let mut onehot = vec![0.0; rows * classes];
    for (r, &l) in labels.iter().enumerate() {
        onehot[r * classes + l] = 1.0;
    }
    if !rec {
        let gv = g.item() * inv_rows;
        let mut data = vec![0.0; rows * classes];
        for r in 0..rows {
            let row = z.row(r);
            let lse = kernels::log_sum_exp(row);
            for c in 0..classes {
                data[r * classes + c] = ((row[c] - lse).exp() - onehot[r * classes + c]) * gv;
            }
        }
        return Ok(constant(z.shape(), data));
    }
    // softmax(z) = exp(z - m - log sum exp(z - m)) with the row max m held constant.
    let mut shift = vec![0.0; rows * classes];
    for r in 0..rows {
        let m = z.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift[r * classes..(r + 1) * classes].fill(-m);
    }
    let shifted = z.add(&constant(z.shape(), shift))?;
    let log_norm = shifted.exp()?.sum_to(&[rows, 1])?.log()?;
    let probs = shifted.sub(&log_norm.broadcast_to(z.shape())?)?.exp()?;
    let diff = probs.sub(&constant(z.shape(), onehot))?;
    diff.mul(&g.broadcast_to(z.shape())?)?.scale(inv_rows)
}
