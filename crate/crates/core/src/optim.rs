//! Adaptive-moment (Adam) optimizer over a list of flat tensors.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// Moment buffers sized like `tensors`.
    pub fn new(learning_rate: f64, tensors: &[&[f64]]) -> Self {
        let zeros: Vec<Vec<f64>> = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, steps: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates `params`, which may be a leading subset of the tensors the
    /// buffers were sized for; moments of the remaining tensors are untouched.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        debug_assert!(params.len() <= self.first.len());
        debug_assert_eq!(grads.len(), params.len());
        self.steps += 1;
        let t = self.steps as i32;
        let bias1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bias2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= self.learning_rate * m_hat / (math::sqrt(v_hat) + self.epsilon);
            }
        }
    }
}
