//! Adan optimizer and the warm-up + cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdanConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdanConfig {
    fn default() -> Self {
        Self { beta1: 0.98, beta2: 0.92, beta3: 0.99, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug, Default)]
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
    n: Vec<f32>,
    prev: Vec<f32>,
}

/// Adaptive Nesterov momentum (Adan) with bias correction. Slots are keyed
/// by position, so the same parameter order must be passed every step.
#[derive(Clone, Debug)]
pub struct Adan {
    pub cfg: AdanConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl Adan {
    pub fn new(cfg: AdanConfig) -> Self {
        Self { cfg, step: 0, slots: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left untouched
    /// but keep their slot.
    pub fn step(&mut self, params: &mut [&mut Tensor<f32>], grads: &[Option<&Tensor<f32>>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.slots.len() < params.len() {
            self.slots.resize_with(params.len(), Slot::default);
        }
        self.step += 1;
        let c = self.cfg;
        let k = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(k);
        let bc2 = 1.0 - c.beta2.powi(k);
        let bc3 = (1.0 - c.beta3.powi(k)).sqrt();
        let (b1, b2, b3) = (c.beta1 as f32, c.beta2 as f32, c.beta3 as f32);
        let decay = (1.0 - lr * c.weight_decay) as f32;
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            let Some(g) = g else { continue };
            let n = p.numel();
            if slot.m.len() != n {
                slot.m = vec![0.0; n];
                slot.v = vec![0.0; n];
                slot.n = vec![0.0; n];
                slot.prev = g.data().to_vec();
            }
            let pd = p.data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                let diff = gi - slot.prev[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * diff;
                let u = gi + b2 * diff;
                slot.n[i] = b3 * slot.n[i] + (1.0 - b3) * u * u;
                let denom = (slot.n[i] as f64).sqrt() / bc3 + c.eps;
                let upd = (slot.m[i] as f64 / bc1 + c.beta2 * slot.v[i] as f64 / bc2) / denom;
                pd[i] = pd[i] * decay - (lr * upd) as f32;
                slot.prev[i] = gi;
            }
        }
    }
}

/// Linear warm-up over the first `warmup` fraction of training, then cosine
/// decay to zero. `progress` is the fraction of training completed, in `[0, 1]`.
pub fn lr_at(progress: f64, lr_max: f64, warmup: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    if warmup > 0.0 && p < warmup {
        lr_max * p / warmup
    } else if warmup >= 1.0 {
        lr_max
    } else {
        lr_max * 0.5 * (1.0 + (std::f64::consts::PI * (p - warmup) / (1.0 - warmup)).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        assert_eq!(lr_at(0.0, 3e-3, 0.1), 0.0);
        assert!((lr_at(0.05, 3e-3, 0.1) - 1.5e-3).abs() < 1e-18);
        assert_eq!(lr_at(0.1, 3e-3, 0.1), 3e-3);
        assert!((lr_at(0.55, 3e-3, 0.1) - 1.5e-3).abs() < 1e-15);
        assert!(lr_at(1.0, 3e-3, 0.1).abs() < 1e-18);
        assert_eq!(lr_at(0.3, 1.0, 0.0), 0.5 * (1.0 + (std::f64::consts::PI * 0.3).cos()));
    }

    #[test]
    fn adan_minimizes_a_quadratic() {
        let mut x = Tensor::from_fn(vec![4], |i| i as f32 - 1.5);
        let mut opt = Adan::new(AdanConfig::default());
        for _ in 0..400 {
            let g = x.map(|v| 2.0 * v);
            opt.step(&mut [&mut x], &[Some(&g)], 0.02);
        }
        assert!(x.data().iter().all(|v| v.abs() < 0.05), "{:?}", x.data());
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // at step one the gradient difference is zero and the bias-corrected
        // update is g / (|g| + eps)
        let mut x = Tensor::from_fn(vec![2], |_| 1.0f32);
        let g = Tensor::new(vec![2], vec![0.5f32, -2.0]).unwrap();
        Adan::new(AdanConfig::default()).step(&mut [&mut x], &[Some(&g)], 0.1);
        assert!((x.data()[0] - 0.9).abs() < 1e-6 && (x.data()[1] - 1.1).abs() < 1e-6);
    }
}
