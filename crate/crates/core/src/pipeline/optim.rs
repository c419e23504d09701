//! Adam with decoupled weight decay and global-norm clipping.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, ps: &ParameterSet) -> Self {
        let m: Vec<Vec<f64>> = ps
            .iter()
            .map(|(_, p)| alloc::vec![0.0; p.value.len()])
            .collect();
        Self {
            cfg,
            lr: cfg.lr,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor from its gradient buffer.
    pub fn step(&mut self, ps: &mut ParameterSet) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in ps.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grad = &p.grad;
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                w[i] -= self.lr * (update + c.weight_decay * w[i]);
            }
        }
    }
}

/// Rescales all trainable gradients so their joint norm is at most
/// `max_norm`. Returns `(norm before, norm after)`.
pub fn clip_grad_norm(ps: &mut ParameterSet, max_norm: f64) -> (f64, f64) {
    let before = ps.grad_norm();
    if before > max_norm && before.is_finite() {
        let s = max_norm / before;
        for p in ps.iter_mut().filter(|p| p.trainable) {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    (before, ps.grad_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Tensor::new(&[2], alloc::vec![1.0, -1.0]).unwrap());
        ps.get_mut(id).grad = alloc::vec![0.5, -3.0];
        let mut opt = Adam::new(
            AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &ps,
        );
        opt.step(&mut ps);
        let w = ps.value(id).data();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Tensor::scalar(2.0));
        ps.get_mut(id).trainable = false;
        ps.get_mut(id).grad = alloc::vec![1.0];
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.step(&mut ps);
        assert_eq!(ps.value(id).item(), 2.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut ps = ParameterSet::new();
        let a = ps.add("a", Tensor::zeros(&[2]));
        ps.get_mut(a).grad = alloc::vec![3.0, 4.0];
        let (before, after) = clip_grad_norm(&mut ps, 1.0);
        assert_eq!(before, 5.0);
        assert!(after <= 1.0 + 1e-12);
        ps.get_mut(a).grad = alloc::vec![0.3, 0.4];
        assert_eq!(clip_grad_norm(&mut ps, 1.0), (0.5, 0.5));
    }
}
