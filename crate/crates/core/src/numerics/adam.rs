//! Gradient descent with adaptive per-parameter step scaling.
//!
//! First and second moment estimates with decay rates 0.9 and 0.999 and
//! epsilon 1e-8, the usual bias correction included. Each trainable group
//! (autoencoder, discriminator, adjacency) owns its own instance so that
//! alternating update schedules never leak moment state across groups.

use super::matrix::Matrix;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Moment-tracking optimizer state for a fixed list of parameter shapes.
pub struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update. `params` and `grads` must match the shapes given
    /// at construction, in the same order. A `None` gradient leaves the
    /// corresponding parameter and its moments untouched.
    ///
    /// # Panics
    /// Panics on length or shape mismatch.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed");
        self.t += 1;
        let bias1 = 1.0 - BETA1.powi(self.t);
        let bias2 = 1.0 - BETA2.powi(self.t);

        for ((param, grad), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(grad) = grad else { continue };
            let p = param.as_mut_slice();
            assert_eq!(p.len(), grad.len(), "gradient shape changed");
            let g = grad.as_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
}
