//! Adam with bias correction and plateau-halving learning rate decay.

use serde::{Deserialize, Serialize};

use crate::diffcore::params::ParamStore;
use crate::error::{CamError, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Consecutive non-improving metric reports tolerated before halving.
    pub patience: u32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            min_lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 5,
        }
    }
}

/// Optimizer state. Moment buffers are aligned with the store's allocation
/// order and sized once at construction; the parameter set must not grow
/// afterwards.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    pub lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    patience_count: u32,
    best_metric: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        AdamState {
            lr: cfg.lr,
            cfg,
            step: 0,
            m: store.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.len()]).collect(),
            patience_count: 0,
            best_metric: f64::NEG_INFINITY,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update from the gradients currently in the store.
    /// Gradients are left untouched; callers zero them between minibatches.
    pub fn update(&mut self, store: &mut ParamStore) -> Result<()> {
        assert_eq!(self.m.len(), store.len(), "optimizer/store mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (pi, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (i, g) in p.grad.iter().enumerate() {
                if !g.is_finite() {
                    return Err(CamError::Numeric(format!(
                        "non-finite gradient in {} at index {i}",
                        p.name
                    )));
                }
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        store.check_finite()
    }

    /// Report a validation metric (higher is better). After `patience`
    /// consecutive reports without strict improvement the learning rate is
    /// halved, floored at `min_lr`. Returns true when a halving happened.
    pub fn plateau_step(&mut self, metric: f64) -> bool {
        if metric > self.best_metric {
            self.best_metric = metric;
            self.patience_count = 0;
            return false;
        }
        self.patience_count += 1;
        if self.patience_count >= self.cfg.patience {
            self.lr = (self.lr * 0.5).max(self.cfg.min_lr);
            self.patience_count = 0;
            return true;
        }
        false
    }
}
