//! Adam optimizer over the flat parameter buffer.

use crate::error::{Error, Result};

/// Step-size and moment-decay settings; defaults follow the training setup
/// used throughout (lr 0.001, beta1 0.9, beta2 0.99).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("adam lr must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} must be in [0,1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("adam eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First/second moment accumulators plus the bias-correction step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state sized for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        // Lockstep over equal-length slices: the update is element-wise, and
        // iterating zipped chunks (rather than indexing four slices) lets the
        // compiler vectorize the sqrt/divide that dominates this loop.
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        let n_tail = params.len() % 4;
        for (((p, g), m), v) in params
            .chunks_exact_mut(4)
            .zip(grads.chunks_exact(4))
            .zip(self.m.chunks_exact_mut(4))
            .zip(self.v.chunks_exact_mut(4))
        {
            for l in 0..4 {
                update(&mut p[l], g[l], &mut m[l], &mut v[l]);
            }
        }
        let start = params.len() - n_tail;
        for i in start..params.len() {
            update(&mut params[i], grads[i], &mut self.m[i], &mut self.v[i]);
        }
        Ok(())
    }
}

/// Scales `grads` down to `max_norm` when its L2 norm exceeds it.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}
