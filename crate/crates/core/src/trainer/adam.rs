//! Adam with bias correction, applied to flat parameter slices.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        if m != 0.0 {
            params[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let before = p.clone();
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.1, &AdamConfig::default());
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let mut p = vec![0.5];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1, &AdamConfig::default());
        assert!((p[0] - (0.5 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((0.5 - p[0] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn runs_are_bit_identical() {
        let run = || {
            let mut p: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
            let mut s = AdamState::new(16);
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| (x * 3.0 + k as f64).sin()).collect();
                adam_step(&mut p, &g, &mut s, 0.01, &AdamConfig::default());
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![3.0, -4.0];
        let mut s = AdamState::new(2);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            adam_step(&mut p, &g, &mut s, 0.05, &AdamConfig::default());
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
    }
}
