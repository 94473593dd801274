use alloc::vec;
use alloc::vec::Vec;

use super::Params;
use crate::{math, Error, Result};

/// Cosine annealing from `lr0` at `t = 0` to `lr_min` at `t = total`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = t.min(total) as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math::cos(math::PI * t / total as f64))
}

/// Adam with Nesterov momentum and the momentum-decay schedule
/// `mu_t = beta1·(1 - 0.5·0.96^(t·psi))`.
#[derive(Clone, Debug)]
pub struct NAdam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
    step: u64,
    mu_product: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl NAdam {
    pub fn new(params: &Params) -> Self {
        NAdam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 0.004,
            step: 0,
            mu_product: 1.0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn mu(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * math::pow(0.96, t as f64 * self.momentum_decay))
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.step += 1;
        let t = self.step;
        let (mu, mu_next) = (self.mu(t), self.mu(t + 1));
        self.mu_product *= mu;
        let bc2 = 1.0 - math::pow(self.beta2, t as f64);
        let c_grad = lr * (1.0 - mu) / (1.0 - self.mu_product);
        let c_mom = lr * mu_next / (1.0 - self.mu_product * mu_next);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let denom = math::sqrt(v[i] / bc2) + self.eps;
                p.value.data[i] -= (c_grad * g[i] + c_mom * m[i]) / denom;
            }
        }
        Ok(())
    }
}
