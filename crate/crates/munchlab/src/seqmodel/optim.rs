//! AdamW with decoupled weight decay and a linear-warmup-then-constant
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    /// Planned total step count; fixes the warmup length.
    pub total_steps: usize,
}

impl OptimConfig {
    pub fn new(lr: f64, weight_decay: f64, warmup_ratio: f64, total_steps: usize) -> OptimConfig {
        OptimConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, warmup_ratio, total_steps }
    }
}

pub struct AdamW {
    cfg: OptimConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    /// Completed steps.
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize, cfg: OptimConfig) -> AdamW {
        AdamW { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// Warmup step count: round(warmup_ratio * total_steps).
    pub fn warmup_steps(&self) -> usize {
        (self.cfg.warmup_ratio * self.cfg.total_steps as f64 + 0.5).floor() as usize
    }

    /// Learning rate applied at 0-indexed `step`: ramps linearly as
    /// (step+1)/warmup_steps, then holds at the base rate.
    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.warmup_steps() as f64;
        if w < 1.0 {
            return self.cfg.lr;
        }
        self.cfg.lr * (((step + 1) as f64) / w).min(1.0)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. Weight decay is decoupled: p -= lr*wd*p happens before
    /// the moment update, so a zero gradient still decays parameters.
    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different model");
        assert_eq!(params.len(), grad.len());
        let lr = self.lr_at(self.t);
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let wd = lr * self.cfg.weight_decay;
        for i in 0..params.len() {
            let g = grad[i] as f64;
            let p = params[i] as f64;
            let m = b1 * self.m[i] as f64 + (1.0 - b1) * g;
            let v = b2 * self.v[i] as f64 + (1.0 - b2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + self.cfg.eps);
            params[i] = (p - wd * p - update) as f32;
        }
    }
}

/// Scales `grad` down to `max_norm` when its L2 norm exceeds it; returns the
/// pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f32], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|&g| g as f64 * g as f64).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
