use alloc::format;

use super::NetworkParams;
use crate::error::{Error, Result};
use crate::math;

/// Momentum SGD with polynomial learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iter: u64,
    pub power: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr0: 2.5e-4, momentum: 0.9, weight_decay: 5e-4, max_iter: 1000, power: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub iter: u64,
    pub velocity: NetworkParams,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, params: &NetworkParams) -> Self {
        Self { config, iter: 0, velocity: NetworkParams::zeros(params.architecture()) }
    }
}

/// `lr0 · (1 − iter / max_iter)^power`.
pub fn poly_lr(iter: u64, config: &SgdConfig) -> Result<f64> {
    if iter > config.max_iter || config.max_iter == 0 {
        return Err(Error::IterOutOfRange { iter, max_iter: config.max_iter });
    }
    let frac = 1.0 - iter as f64 / config.max_iter as f64;
    if config.power == 0.0 {
        return Ok(config.lr0);
    }
    Ok(config.lr0 * math::powf(frac, config.power))
}

/// One step: `v ← μv + g`, `θ ← θ − lr·v − lr·wd·θ`. On a non-finite result
/// the parameters and state are left untouched.
pub fn sgd_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut OptimizerState) -> Result<()> {
    params.check_shape(grads)?;
    params.check_shape(&state.velocity)?;
    let lr = poly_lr(state.iter, &state.config)?;
    let SgdConfig { momentum, weight_decay, .. } = state.config;
    let mut velocity = state.velocity.clone();
    let mut next = params.clone();
    for ((v, g), (t, t0)) in velocity.values_mut().zip(grads.values()).zip(next.values_mut().zip(params.values())) {
        *v = momentum * *v + g;
        *t = t0 - lr * *v - lr * weight_decay * t0;
    }
    if !next.is_finite() || !velocity.is_finite() {
        return Err(Error::NonFinite(format!("SGD step {}", state.iter)));
    }
    *params = next;
    state.velocity = velocity;
    state.iter += 1;
    Ok(())
}

/// `θ' ← λθ' + (1 − λ)θ`.
pub fn ema_update(momentum: &mut NetworkParams, student: &NetworkParams, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::BadLambda(lambda));
    }
    momentum.check_shape(student)?;
    if lambda == 0.0 {
        momentum.clone_from(student);
        return Ok(());
    }
    if lambda == 1.0 {
        return Ok(());
    }
    for (m, s) in momentum.values_mut().zip(student.values()) {
        *m = lambda * *m + (1.0 - lambda) * s;
    }
    Ok(())
}
