//! Gradient-descent machinery shared by the NCA trainer and both
//! autoencoder families.

use ndarray::{Array1, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const GRAD_NORM_EPS: f64 = 1e-8;

/// Scale a gradient tensor to unit L2 norm: `g / (||g|| + eps)`.
pub fn normalize_gradient(mut grad: ArrayViewMut1<'_, f64>, eps: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = 1.0 / (norm + eps);
    grad.mapv_inplace(|g| g * scale);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// Optimizer state for one flat parameter tensor. Callers keep their
/// parameters in whatever shapes they like and expose them flattened; one
/// instance per tensor keeps moment estimates aligned.
#[derive(Debug, Clone)]
pub struct TensorOptimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Array1<f64>,
    v: Array1<f64>,
    t: u64,
}

impl TensorOptimizer {
    pub fn new(kind: OptimizerKind, lr: f64, dim: usize) -> Result<Self> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Validation(format!(
                "learning rate must be finite and nonnegative, got {lr}"
            )));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::Validation(format!(
                    "bad Adam parameters beta1={beta1} beta2={beta2} eps={eps}"
                )));
            }
        }
        Ok(TensorOptimizer {
            kind,
            lr,
            m: Array1::zeros(dim),
            v: Array1::zeros(dim),
            t: 0,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One update step; `params` and `grad` must both match the
    /// dimensionality given at construction.
    pub fn step(&mut self, mut params: ArrayViewMut1<'_, f64>, grad: &Array1<f64>) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer dim {}, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for i in 0..grad.len() {
                    params[i] -= self.lr * grad[i];
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let b1t = 1.0 - beta1.powi(self.t as i32);
                let b2t = 1.0 - beta2.powi(self.t as i32);
                for i in 0..grad.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mhat = self.m[i] / b1t;
                    let vhat = self.v[i] / b2t;
                    params[i] -= self.lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn adam(lr: f64, dim: usize) -> TensorOptimizer {
        TensorOptimizer::new(OptimizerKind::default(), lr, dim).unwrap()
    }

    #[test]
    fn first_adam_step_moves_by_lr_in_gradient_direction() {
        // With bias correction, step 1 reduces to lr * g / (|g| + ~eps).
        let mut opt = adam(0.01, 2);
        let mut p = array![1.0, -2.0];
        let g = array![0.5, -0.25];
        opt.step(p.view_mut(), &g).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut opt = adam(0.05, 1);
        let mut p = array![5.0];
        for _ in 0..2000 {
            let g = array![2.0 * p[0]];
            opt.step(p.view_mut(), &g).unwrap();
        }
        assert!(p[0].abs() < 1e-3, "ended at {}", p[0]);
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut opt = TensorOptimizer::new(OptimizerKind::Sgd, 0.1, 2).unwrap();
        let mut p = array![1.0, 2.0];
        opt.step(p.view_mut(), &array![1.0, -1.0]).unwrap();
        assert_eq!(p, array![0.9, 2.1]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut opt = adam(0.0, 2);
        let mut p = array![1.25, -0.5];
        for _ in 0..3 {
            opt.step(p.view_mut(), &array![0.3, 0.7]).unwrap();
        }
        assert_eq!(p, array![1.25, -0.5]);
    }

    #[test]
    fn gradient_normalization_yields_unit_norm() {
        let mut g = array![3.0, 4.0];
        normalize_gradient(g.view_mut(), GRAD_NORM_EPS);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        // Direction preserved.
        assert!((g[0] / g[1] - 0.75).abs() < 1e-9);

        // Zero gradients stay finite (and zero).
        let mut z = array![0.0, 0.0];
        normalize_gradient(z.view_mut(), GRAD_NORM_EPS);
        assert_eq!(z, array![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut opt = adam(0.01, 3);
        let mut p = array![0.0, 0.0];
        assert!(opt.step(p.view_mut(), &array![1.0, 1.0]).is_err());
    }
}
