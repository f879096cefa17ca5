use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One bias-corrected adaptive-moment update of every parameter.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match parameter list".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Owning wrapper around [`adam_step`].
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, state: AdamState::default() }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        adam_step(params, grads, &mut self.state, &self.config)
    }
}
