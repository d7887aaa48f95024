//! Adam with L2 weight decay and a step learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update; the decay term `wd * param` is added to the gradient.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Vec<T>], grads: &[Vec<T>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let w = p[i].to_wide();
                let grad = g[i].to_wide() + self.weight_decay * w;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                let update = lr * (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + self.eps);
                p[i] = T::lit(w - update);
            }
        }
    }
}

/// `base * factor^(epoch / every)`.
pub fn step_lr(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    if every == 0 {
        return base;
    }
    base * libm::pow(factor, (epoch / every) as f64)
}
