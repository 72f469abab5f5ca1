//! RMSProp.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// One in-place RMSProp update:
/// `s ← ρ·s + (1−ρ)·g²`, `θ ← θ − η·g / (√s + ε)`.
pub fn rmsprop_step(theta: &mut [f64], grad: &[f64], state: &mut [f64], lr: f64, smoothing: f64, eps: f64) {
    debug_assert!(theta.len() == grad.len() && grad.len() == state.len());
    for ((t, g), s) in theta.iter_mut().zip(grad).zip(state.iter_mut()) {
        *s = smoothing * *s + (1.0 - smoothing) * g * g;
        *t -= lr * g / (s.sqrt() + eps);
    }
}

/// Running mean of squared gradients for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub smoothing: f64,
    pub eps: f64,
    state: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            smoothing: DEFAULT_SMOOTHING,
            eps: DEFAULT_EPSILON,
            state: Vec::new(),
        }
    }

    pub fn state(&self) -> &[Vec<f64>] {
        &self.state
    }

    /// Updates `params` with `grads`, one gradient buffer per tensor.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::domain("one gradient buffer per parameter required"));
        }
        if self.state.is_empty() {
            self.state = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.state) {
            if p.numel() != g.len() || s.len() != g.len() {
                return Err(Error::domain("gradient shape does not match parameter"));
            }
            rmsprop_step(p.data_mut(), g, s, self.lr, self.smoothing, self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut th = [0.5, -1.0];
        let mut s = [0.0; 2];
        rmsprop_step(&mut th, &[0.0, 0.0], &mut s, 0.01, 0.99, 1e-8);
        assert_eq!(th, [0.5, -1.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let mut th = [0.0];
        let mut s = [0.0];
        rmsprop_step(&mut th, &[1.0], &mut s, 0.01, 0.99, 1e-8);
        assert!((s[0] - 0.01).abs() < 1e-15);
        assert!((th[0] - (-0.01 / (0.1 + 1e-8))).abs() < 1e-15);
        assert!((th[0] + 0.09999999).abs() < 1e-8);
    }

    #[test]
    fn steady_gradient_step_tends_to_learning_rate() {
        let (mut th, mut s) = ([0.0], [0.0]);
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..5000 {
            rmsprop_step(&mut th, &[0.3], &mut s, 0.01, 0.99, 1e-8);
            step = prev - th[0];
            prev = th[0];
        }
        assert!((step - 0.01 * 0.3 / (0.3 + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        for lr in [0.001, 0.01, 0.1] {
            let (mut th, mut s) = ([1.0], [0.0]);
            let mut last = 1.0f64;
            for _ in 0..50 {
                let g = [th[0]];
                rmsprop_step(&mut th, &g, &mut s, lr, 0.99, 1e-8);
                assert!(th[0].abs() <= last, "lr {lr}: |θ| rose to {}", th[0]);
                last = th[0].abs();
            }
        }
    }
}
