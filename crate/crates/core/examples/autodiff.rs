//! Reverse-mode gradients on a tape, including a gradient of a gradient.

use metaaug::{grad, Tape, Tensor};

fn main() -> metaaug::Result<()> {
    let tape = Tape::new();
    let w = tape.watch(&Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]])?);
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 1.0]])?;
    let y = Tensor::column(&[1.0, 0.0, 2.0]);

    // loss = mean((tanh(x w) · 1 - y)^2)
    let h = x.matmul(&w)?.tanh()?;
    let pred = h.sum_to(&[3, 1])?;
    let loss = pred.mse(&y)?;
    println!("loss = {:.6}", loss.item());
    println!("ops recorded: {:?}", tape.op_names());

    let g = grad(&loss, &[w.clone()], true)?;
    println!("dloss/dw = {:?}", g.values[0].data());

    // The gradient was recorded too, so its squared norm can be differentiated.
    let norm = g.values[0].square()?.sum()?;
    let gg = grad(&norm, &[w], false)?;
    println!("d|grad|^2/dw = {:?}", gg.values[0].data());
    Ok(())
}
