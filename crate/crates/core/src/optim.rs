//! First-order optimizers over flat parameter buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::sqrt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

/// Optimizer state for one parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, lr: f64, len: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; len], vec![0.0; len]),
        };
        Self { kind, lr, t: 0, m, v }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t = self.t.saturating_add(1);
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - libm::pow(beta1, f64::from(self.t));
                let bc2 = 1.0 - libm::pow(beta2, f64::from(self.t));
                let step = self.lr / bc1;
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    params[i] -= step * self.m[i] / (sqrt(self.v[i] / bc2) + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut s = OptimizerState::new(Optimizer::Sgd, 0.5, 2);
        let mut p = [1.0, 2.0];
        s.step(&mut p, &[2.0, -2.0]);
        assert_eq!(p, [0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut s = OptimizerState::new(Optimizer::adam(), 0.1, 2);
        let mut p = [0.0, 0.0];
        s.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = OptimizerState::new(Optimizer::adam(), 0.05, 1);
        let mut p = [3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            s.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
