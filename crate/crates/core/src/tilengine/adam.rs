use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TilError;
use crate::modelzoo::Parameter;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Moment buffers keyed by parameter name. Buffers are created on a
/// parameter's first update, so frozen parameters never get any.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn has_moments(&self, name: &str) -> bool {
        self.moments.contains_key(name)
    }

    pub fn tracked(&self) -> usize {
        self.moments.len()
    }

    /// `(m, v)` for `name`, if allocated.
    pub fn moments(&self, name: &str) -> Option<(&[f32], &[f32])> {
        self.moments.get(name).map(|mv| (mv.m.as_slice(), mv.v.as_slice()))
    }
}

/// One bias-corrected Adam update of every non-frozen parameter, consuming
/// the gradients stored on them. Frozen parameters are left bit-identical
/// and any gradient they carry is dropped.
pub fn adam_step(params: &mut [&mut Parameter<f32>], state: &mut AdamState) -> Result<(), TilError> {
    for p in params.iter() {
        if !p.frozen && p.value.grad().is_none() {
            return Err(TilError::MissingGradient(p.name.clone()));
        }
        if let Some(mv) = state.moments.get(&p.name) {
            if mv.m.len() != p.value.numel() {
                return Err(TilError::InvalidConfig(format!("moment buffers for {} do not match its shape", p.name)));
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
    let (a1, a2) = ((1.0 - c.beta1) as f32, (1.0 - c.beta2) as f32);
    for p in params.iter_mut() {
        let grad = p.value.take_grad();
        if p.frozen {
            continue;
        }
        let grad = grad.expect("checked above");
        let n = grad.len();
        let mv = state.moments.entry(p.name.clone()).or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(&grad).zip(mv.m.iter_mut()).zip(mv.v.iter_mut()) {
            *m = b1 * *m + a1 * g;
            *v = b2 * *v + a2 * g * g;
            let m_hat = *m as f64 / bc1;
            let v_hat = *v as f64 / bc2;
            *w -= (c.lr * m_hat / (v_hat.sqrt() + c.eps)) as f32;
        }
    }
    Ok(())
}
