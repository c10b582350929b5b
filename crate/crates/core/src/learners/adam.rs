use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::tensor::Tensor;

/// Adam with bias correction. Weight decay is added to the gradient before
/// the moment updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        params: &ParamSet,
        grads: &[Tensor],
        weight_decay: f64,
    ) -> Result<ParamSet> {
        if grads.len() != params.len()
            || grads
                .iter()
                .zip(params.tensors())
                .any(|(g, p)| g.shape() != p.shape())
        {
            return Err(Error::invalid("adam", "gradients do not match parameters"));
        }
        if self.m.is_empty() {
            self.m = params
                .tensors()
                .iter()
                .map(|p| vec![0.0; p.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(params.len());
        for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(j, (&w, &gj))| {
                    let gj = gj + weight_decay * w;
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                    let m_hat = m[j] / c1;
                    let v_hat = v[j] / c2;
                    w - self.lr * m_hat / (v_hat.sqrt() + self.eps)
                })
                .collect();
            out.push(Tensor::new(p.shape().to_vec(), data)?);
        }
        params.with_tensors(out)
    }
}
