use super::{numel, Primitive, Tensor};
use crate::error::{Error, Result};

pub(super) fn forward(op: &Primitive, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)> {
    let name = op.name();
    let arity = match op {
        Primitive::Add | Primitive::Mul | Primitive::Matmul { .. } => Some(2),
        Primitive::Concat { .. } => None,
        _ => Some(1),
    };
    if let Some(n) = arity {
        if inputs.len() != n {
            return Err(Error::invalid(
                name,
                format!("expected {n} operands, got {}", inputs.len()),
            ));
        }
    }

    match op {
        Primitive::Add | Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(name, a.shape(), b.shape()));
            }
            let data = if matches!(op, Primitive::Add) {
                zip_map(a.data(), b.data(), |x, y| x + y)
            } else {
                zip_map(a.data(), b.data(), |x, y| x * y)
            };
            Ok((a.shape().to_vec(), data))
        }
        Primitive::Matmul { trans_a, trans_b } => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 {
                return Err(mismatch(name, a.shape(), b.shape()));
            }
            let (m, ka) = dims(a.shape(), *trans_a);
            let (kb, n) = dims(b.shape(), *trans_b);
            if ka != kb {
                return Err(mismatch(name, a.shape(), b.shape()));
            }
            let data = matmul(a.data(), a.shape(), *trans_a, b.data(), b.shape(), *trans_b);
            Ok((vec![m, n], data))
        }
        Primitive::Relu => Ok(unary(inputs[0], |x| if x > 0.0 { x } else { 0.0 })),
        Primitive::Tanh => Ok(unary(inputs[0], f64::tanh)),
        Primitive::Square => Ok(unary(inputs[0], |x| x * x)),
        Primitive::Exp => Ok(unary(inputs[0], f64::exp)),
        Primitive::Log => Ok(unary(inputs[0], f64::ln)),
        Primitive::Sum { to } | Primitive::Mean { to } => {
            let a = inputs[0];
            if !broadcastable(to, a.shape()) {
                return Err(mismatch(name, a.shape(), to));
            }
            let mut data = reduce_sorted(a.data(), a.shape(), to);
            if matches!(op, Primitive::Mean { .. }) {
                let count = (numel(a.shape()) / numel(to).max(1)) as f64;
                if count > 0.0 {
                    data.iter_mut().for_each(|v| *v /= count);
                }
            }
            Ok((to.clone(), data))
        }
        Primitive::Broadcast { to } => {
            let a = inputs[0];
            if !broadcastable(a.shape(), to) {
                return Err(mismatch(name, a.shape(), to));
            }
            Ok((to.clone(), broadcast(a.data(), a.shape(), to)))
        }
        Primitive::SoftmaxCrossEntropy { labels } => {
            let a = inputs[0];
            if a.shape().len() != 2 || a.shape()[0] != labels.len() {
                return Err(mismatch(name, a.shape(), &[labels.len()]));
            }
            let classes = a.shape()[1];
            if classes == 0 || a.shape()[0] == 0 {
                return Err(Error::invalid(name, "empty logits"));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::invalid(
                    name,
                    format!("label {bad} out of range for {classes} classes"),
                ));
            }
            let losses: Vec<f64> = labels
                .iter()
                .enumerate()
                .map(|(r, &l)| {
                    let row = &a.data()[r * classes..(r + 1) * classes];
                    log_sum_exp(row) - row[l]
                })
                .collect();
            Ok((vec![], vec![sorted_sum(losses) / labels.len() as f64]))
        }
        Primitive::Gather { indices } => {
            let a = inputs[0];
            if a.shape().len() != 2 {
                return Err(Error::invalid(
                    name,
                    format!("expected a 2-D tensor, got {:?}", a.shape()),
                ));
            }
            let rows = a.shape()[0];
            let width = numel(&a.shape()[1..]);
            if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
                return Err(Error::invalid(
                    name,
                    format!("row {bad} out of range for shape {:?}", a.shape()),
                ));
            }
            let mut data = Vec::with_capacity(indices.len() * width);
            for &i in indices.iter() {
                data.extend_from_slice(&a.data()[i * width..(i + 1) * width]);
            }
            let mut shape = a.shape().to_vec();
            shape[0] = indices.len();
            Ok((shape, data))
        }
        Primitive::Concat { axis } => concat(inputs, *axis),
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>) {
    (a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn dims(shape: &[usize], trans: bool) -> (usize, usize) {
    if trans {
        (shape[1], shape[0])
    } else {
        (shape[0], shape[1])
    }
}

fn transposed(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

pub(super) fn matmul(
    a: &[f64],
    a_shape: &[usize],
    trans_a: bool,
    b: &[f64],
    b_shape: &[usize],
    trans_b: bool,
) -> Vec<f64> {
    let (m, k) = dims(a_shape, trans_a);
    let (_, n) = dims(b_shape, trans_b);
    let mut out = vec![0.0; m * n];
    // Every variant accumulates each output over p in ascending order and
    // skips zero entries of A.
    match (trans_a, trans_b) {
        (false, false) => {
            for i in 0..m {
                let out_row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    axpy(out_row, aip, &b[p * n..(p + 1) * n]);
                }
            }
        }
        (true, false) => {
            // A is stored [k, m].
            for i in 0..m {
                let out_row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[p * m + i];
                    if aip == 0.0 {
                        continue;
                    }
                    axpy(out_row, aip, &b[p * n..(p + 1) * n]);
                }
            }
        }
        (false, true) => {
            let bt = transposed(b, b_shape[0], b_shape[1]);
            return matmul(a, a_shape, false, &bt, &[k, n], false);
        }
        (true, true) => {
            let at = transposed(a, a_shape[0], a_shape[1]);
            return matmul(&at, &[m, k], false, b, b_shape, true);
        }
    }
    out
}

#[inline]
fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// True if `small` broadcasts (right-aligned, numpy rules) to `big`.
pub(super) fn broadcastable(small: &[usize], big: &[usize]) -> bool {
    if small.len() > big.len() {
        return false;
    }
    let offset = big.len() - small.len();
    small
        .iter()
        .enumerate()
        .all(|(i, &d)| d == big[offset + i] || d == 1)
}

/// For each linear index of `big`, the linear index of `small` it reads from.
pub(super) fn broadcast_map(small: &[usize], big: &[usize]) -> Vec<usize> {
    let offset = big.len() - small.len();
    let mut small_strides = vec![0usize; big.len()];
    let mut stride = 1;
    for i in (0..small.len()).rev() {
        if small[i] != 1 {
            small_strides[offset + i] = stride;
        }
        stride *= small[i];
    }
    let total = numel(big);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; big.len()];
    let mut idx = 0usize;
    for _ in 0..total {
        map.push(idx);
        for d in (0..big.len()).rev() {
            counter[d] += 1;
            idx += small_strides[d];
            if counter[d] < big[d] {
                break;
            }
            idx -= small_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

/// Order-independent sum: terms are added in ascending order.
pub(super) fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    sorted_sum_in_place(&mut terms)
}

fn broadcast(src: &[f64], small: &[usize], big: &[usize]) -> Vec<f64> {
    let total = numel(big);
    if src.len() == 1 {
        return vec![src[0]; total];
    }
    if big.len() == 2 && small.len() == 2 {
        let (m, n) = (big[0], big[1]);
        if small == [1, n] {
            let mut out = Vec::with_capacity(total);
            for _ in 0..m {
                out.extend_from_slice(src);
            }
            return out;
        }
        if small == [m, 1] {
            let mut out = Vec::with_capacity(total);
            for &v in src {
                out.extend(std::iter::repeat_n(v, n));
            }
            return out;
        }
    }
    broadcast_map(small, big)
        .into_iter()
        .map(|i| src[i])
        .collect()
}

/// Sums `data` (shape `big`) down to `small`, each output adding its terms
/// in ascending order.
fn reduce_sorted(data: &[f64], big: &[usize], small: &[usize]) -> Vec<f64> {
    let out_len = numel(small);
    if out_len == 1 {
        return vec![sorted_sum(data.to_vec())];
    }
    if out_len == data.len() {
        return data.to_vec();
    }
    if big.len() == 2 && small.len() == 2 {
        let (m, n) = (big[0], big[1]);
        let mut buf = Vec::with_capacity(m.max(n));
        if small == [1, n] {
            return (0..n)
                .map(|c| {
                    buf.clear();
                    buf.extend((0..m).map(|r| data[r * n + c]));
                    sorted_sum_in_place(&mut buf)
                })
                .collect();
        }
        if small == [m, 1] {
            return data
                .chunks(n)
                .map(|row| {
                    buf.clear();
                    buf.extend_from_slice(row);
                    sorted_sum_in_place(&mut buf)
                })
                .collect();
        }
    }
    let map = broadcast_map(small, big);
    let mut pairs: Vec<(usize, f64)> = map.into_iter().zip(data.iter().copied()).collect();
    pairs.sort_unstable_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut out = vec![0.0; out_len];
    for (i, v) in pairs {
        out[i] += v;
    }
    out
}

fn sorted_sum_in_place(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

pub(super) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + sorted_sum(row.iter().map(|&x| (x - m).exp()).collect()).ln()
}

fn concat(inputs: &[&Tensor], axis: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let name = "concat";
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid(name, "no operands"))?;
    if axis > 1 {
        return Err(Error::invalid(name, format!("axis {axis} unsupported")));
    }
    for t in inputs {
        if t.shape().len() != 2 {
            return Err(mismatch(name, first.shape(), t.shape()));
        }
        let other_axis = 1 - axis;
        if t.shape()[other_axis] != first.shape()[other_axis] {
            return Err(mismatch(name, first.shape(), t.shape()));
        }
    }
    if axis == 0 {
        let rows = inputs.iter().map(|t| t.shape()[0]).sum();
        let data = inputs
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        Ok((vec![rows, first.shape()[1]], data))
    } else {
        let rows = first.shape()[0];
        let cols: usize = inputs.iter().map(|t| t.shape()[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in inputs {
                data.extend_from_slice(t.row(r));
            }
        }
        Ok((vec![rows, cols], data))
    }
}
