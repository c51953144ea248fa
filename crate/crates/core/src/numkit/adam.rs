use serde::{Deserialize, Serialize};

use super::{NumError, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optional cap on the global gradient norm, applied before the moments.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

/// First/second moment accumulators mirroring one [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
///
/// Gradients holding NaN or infinity are rejected before anything is touched.
pub fn adam_step(params: &mut ParameterSet, grads: &ParameterSet, state: &mut AdamState) -> Result<(), NumError> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.m)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(NumError::NumericFault(format!("non-finite gradient in {name}")));
    }
    let cfg = state.config;
    let clip_scale = match cfg.max_grad_norm {
        Some(cap) => {
            let norm = grads.global_norm();
            if norm > cap {
                cap / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let step = cfg.lr / bc1;

    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for idx in 0..params.len() {
        let g = grads.get(idx);
        let m = state.m.get_mut(idx);
        let v = state.v.get_mut(idx);
        let p = params.get_mut(idx);
        ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            let g = g * clip_scale;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v / bc2).sqrt() + cfg.eps);
        });
    }
    Ok(())
}
