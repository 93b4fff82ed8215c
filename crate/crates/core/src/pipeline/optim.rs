//! Adam with bias correction and an exponential learning-rate decay that
//! starts after a configurable epoch.

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Last epoch (1-based) that still uses the base learning rate.
    pub decay_start: usize,
    /// Total decay applied by the end of the span.
    pub decay_factor: f64,
    /// Number of epochs the decay is spread over.
    pub decay_span: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            base_lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_start: 150,
            decay_factor: 0.1,
            decay_span: 150,
        }
    }
}

/// Learning rate at a 1-based epoch: the base rate through `decay_start`,
/// then `base * factor^((epoch - decay_start) / span)`.
pub fn lr_at_epoch(cfg: &AdamConfig, epoch: usize) -> f64 {
    if epoch <= cfg.decay_start {
        cfg.base_lr
    } else {
        let span = cfg.decay_span.max(1) as f64;
        let exponent = (epoch - cfg.decay_start) as f64 / span;
        cfg.base_lr * cfg.decay_factor.powf(exponent)
    }
}

/// Optimizer state: step count plus first/second moment buffers matching
/// the parameter store entry for entry.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> AdamState {
        let m = store
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        let v = store
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        AdamState { cfg, step: 0, m, v }
    }
}

/// One Adam update over every parameter. The whole step aborts (no partial
/// update) if any gradient is non-finite. Parameters with `lr_scale == 0`
/// are left bitwise untouched.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, epoch: usize) -> Result<()> {
    for p in store.params() {
        if !p.grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Numeric {
                detail: format!(
                    "non-finite gradient in parameter \"{}\"; step aborted",
                    p.name
                ),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = lr_at_epoch(&state.cfg, epoch);
    let bias1 = 1.0 - state.cfg.beta1.powi(t);
    let bias2 = 1.0 - state.cfg.beta2.powi(t);
    for (idx, p) in store.params_mut().iter_mut().enumerate() {
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = state.cfg.beta1 * m[i] + (1.0 - state.cfg.beta1) * g;
            v[i] = state.cfg.beta2 * v[i] + (1.0 - state.cfg.beta2) * g * g;
            if p.lr_scale != 0.0 {
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p.value[i] -= lr * p.lr_scale * m_hat / (v_hat.sqrt() + state.cfg.epsilon);
            }
        }
    }
    Ok(())
}
