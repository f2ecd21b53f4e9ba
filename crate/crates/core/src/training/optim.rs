use rand::Rng;

use crate::autodiff::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Half-width of the Xavier uniform interval for a `[fan_in, fan_out]` weight.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-uniform tensor of the given shape.
pub fn init_param<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let b = xavier_bound(rows, cols);
    let data = (0..rows * cols).map(|_| rng.random_range(-b..=b)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive shape")
}

/// Rescales all gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// `lr0 * decay^epoch`.
pub fn lr_schedule(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

/// Adam with bias correction. Moments exist only for trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || -> Vec<Option<Tensor>> {
            store
                .iter()
                .map(|p| p.trainable.then(|| Tensor::zeros(p.tensor.rows(), p.tensor.cols())))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::contract("optimizer state does not match the parameter store"));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, param) in store.iter_mut().enumerate() {
            let (Some(m), Some(v), Some(g)) = (self.m[i].as_mut(), self.v[i].as_mut(), grads.by_id(ParamId(i))) else {
                continue;
            };
            if g.shape() != param.tensor.shape() {
                return Err(Error::Dimension {
                    op: "adam",
                    lhs: param.tensor.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let values = param.tensor.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
