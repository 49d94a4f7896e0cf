use serde::{Deserialize, Serialize};

use crate::floats;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    #[serde(with = "floats::vec")]
    m: Vec<f64>,
    #[serde(with = "floats::vec")]
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer shape mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(3);
        let mut p = vec![0.3, -1.0, 2.0];
        adam.step(&mut p, &[0.0; 3], 0.1);
        assert_eq!(p, vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[1e6, -1e6], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-12);
        assert!((p[1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn unit_gradient_first_step() {
        let mut adam = Adam::new(1);
        let mut p = vec![0.0];
        adam.step(&mut p, &[1.0], 0.1);
        // m_hat = 1, v_hat = 1
        assert!((p[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(adam.step_count(), 1);
    }
}
