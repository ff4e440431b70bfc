//! Adam optimizer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::Param;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    /// Moment coefficients 0.9 / 0.999, no weight decay.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.v
    }

    /// Restores state saved from [`Adam::steps`] and the moment accessors.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Result<()> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid("first and second moment buffers disagree in shape"));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Updates every trainable parameter in `params` (buffers are skipped).
    /// The order of trainable parameters must be the same on every call.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        let mut trainable: Vec<&mut Param> = params.into_iter().filter(|p| p.is_trainable()).collect();
        if self.m.is_empty() {
            self.m = trainable.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != trainable.len() || self.m.iter().zip(&trainable).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::invalid("optimizer state does not match the parameter set"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let step_size = (self.lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32);
        for ((p, m), v) in trainable.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let denom = libm::sqrtf(v[i] * inv_bc2) + eps;
                p.value[i] -= step_size * m[i] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Param::new(vec![3], vec![1.0, -2.0, 0.5]);
        let mut opt = Adam::new(1e-3);
        for _ in 0..5 {
            opt.step([&mut p]).unwrap();
        }
        assert_eq!(p.value, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let mut p = Param::new(vec![2], vec![1.0, 2.0]);
        p.grad = vec![0.3, -7.0];
        let mut opt = Adam::new(0.0);
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value, vec![1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr · sign(g).
        let mut p = Param::new(vec![2], vec![0.0, 0.0]);
        p.grad = vec![4.0, -0.01];
        let mut opt = Adam::new(0.1);
        opt.step([&mut p]).unwrap();
        assert!((p.value[0] + 0.1).abs() < 1e-6);
        assert!((p.value[1] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(vec![1], vec![3.0]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            opt.step([&mut p]).unwrap();
        }
        assert!((p.value[0] - 1.0).abs() < 1e-2);
    }
}
