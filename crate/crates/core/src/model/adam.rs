use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied only to blocks flagged for it.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Adam moments for a fixed list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// One update. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut [(&mut [f64], bool)], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} blocks, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, g) in grads.iter().enumerate() {
            if g.len() != self.m[k].len() || params[k].0.len() != self.m[k].len() {
                return Err(Error::Shape(format!("block {k} changed size")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter block {k}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (k, ((p, decay), g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                if *decay {
                    p[i] -= c.lr * c.weight_decay * p[i];
                }
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
