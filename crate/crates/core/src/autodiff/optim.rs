use serde::{Deserialize, Serialize};

use super::param::Parameter;
use crate::error::{Error, Result};

/// Adam hyperparameters. `beta1` defaults to 0.95.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter. Gradients are left
/// in place; the caller zeroes them.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    lr: f32,
    cfg: &AdamConfig,
) -> Result<()> {
    let params: Vec<&mut Parameter> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| p.grad().is_none()) {
        return Err(Error::Optimizer(p.name().to_string()));
    }
    for p in params {
        let (tensor, state) = p.parts_mut();
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - (cfg.beta1 as f64).powi(t);
        let bc2 = 1.0 - (cfg.beta2 as f64).powi(t);
        let grad = tensor.grad().expect("checked above").to_vec();
        let data = tensor.data_mut();
        for (j, &g) in grad.iter().enumerate() {
            state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g;
            state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = state.m[j] as f64 / bc1;
            let v_hat = state.v[j] as f64 / bc2;
            data[j] -= (lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
        }
    }
    Ok(())
}
