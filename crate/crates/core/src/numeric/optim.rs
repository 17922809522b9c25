use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// First and second moment estimates, one slot per parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(num_params: usize) -> Self {
        AdamState { m: vec![None; num_params], v: vec![None; num_params], step: 0 }
    }
}

/// Linear warmup to `peak` over `warmup` steps, constant afterwards.
pub fn warmup_lr(peak: f64, step: u64, warmup: u64) -> f64 {
    if warmup == 0 {
        peak
    } else {
        peak * ((step as f64) / (warmup as f64)).min(1.0)
    }
}

/// One bias-corrected Adam update at learning rate `lr`.
///
/// Only parameters accepted by `trainable` are touched; parameters without a
/// gradient are treated as having a zero gradient.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    lr: f64,
    trainable: impl Fn(ParamId) -> bool,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Shape(format!("optimizer state for {} params, store has {}", state.m.len(), params.len())));
    }
    for id in params.ids() {
        if let Some(g) = grads.get(id) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {} {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.beta1.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for id in params.ids() {
        if !trainable(id) {
            continue;
        }
        let Some(g) = grads.get(id) else { continue };
        let shape = params.get(id).shape().to_vec();
        let m = state.m[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
        let v = state.v[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
        let p = params.get_mut(id);
        for (((pi, &gi), mi), vi) in
            p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
