//! AdamW with decoupled weight decay, and a warmup-cosine learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!("betas must lie in [0, 1): {beta1}, {beta2}")));
        }
        if !(eps > 0.0) || !(weight_decay >= 0.0) {
            return Err(Error::Config("eps must be positive and weight decay non-negative".into()));
        }
        Ok(Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// betas (0.9, 0.999), eps 1e-8.
    pub fn with_weight_decay(weight_decay: f64) -> Result<Self> {
        Self::new(0.9, 0.999, 1e-8, weight_decay)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its accumulated gradient:
    ///
    /// ```text
    /// p <- p - lr * wd * p
    /// m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
    /// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    /// ```
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| Tensor::zeros_like(&p.value)).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(Error::Config("optimizer state does not match parameter set".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        for ((p, m), v) in params
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let grad = p.grad.data();
            for (i, value) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i] as f64;
                let mi = self.beta1 * m.data()[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] as f64 + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi as f32;
                v.data_mut()[i] = vi as f32;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                let mut x = *value as f64;
                if self.weight_decay != 0.0 {
                    x *= decay;
                }
                *value = (x - lr * update) as f32;
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr`, then cosine decay to `min_lr` at
/// `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupCosine {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupCosine {
    pub fn new(base_lr: f64, min_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        if warmup_steps > total_steps {
            return Err(Error::Config(format!(
                "warmup ({warmup_steps}) longer than training ({total_steps})"
            )));
        }
        if base_lr < 0.0 || min_lr < 0.0 || min_lr > base_lr {
            return Err(Error::Config(format!(
                "need 0 <= min_lr <= base_lr, got {min_lr}, {base_lr}"
            )));
        }
        Ok(Self {
            base_lr,
            min_lr,
            warmup_steps,
            total_steps,
        })
    }

    /// Learning rate at zero-based optimizer step `step`. Warmup steps ramp
    /// `base * (s + 1) / (warmup + 1)`; the first post-warmup step is exactly
    /// `base_lr` and `total_steps` is exactly `min_lr`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / (self.warmup_steps + 1) as f64;
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return self.min_lr;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr
            + (self.base_lr - self.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
