use std::collections::BTreeMap;

use crate::arch::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::config::{DecayStyle, TrainConfig};

/// Step-decayed learning rate: `lr0 * gamma^floor(iter / step_size)`.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    let drops = iter / cfg.step_size.max(1);
    cfg.lr * cfg.gamma.powi(drops.min(i32::MAX as u64) as i32)
}

/// Adam moments per parameter key and the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
    pub t: u64,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update of a single tensor, with 64-bit arithmetic per element.
/// `t` is the step number after incrementing (1 on the first step).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
    decay: bool,
) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let lambda = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..param.len() {
        let p = param[i] as f64;
        let mut g = grad[i] as f64;
        if cfg.decay_style == DecayStyle::Coupled {
            g += lambda * p;
        }
        let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
        let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let mut step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps_adam);
        if cfg.decay_style == DecayStyle::Decoupled {
            step += lr * lambda * p;
        }
        param[i] = (p - step) as f32;
    }
}

/// Applies one Adam step to every learned tensor of `store`. Gradients are
/// validated first; on any error nothing is modified.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (key, _, p) in store.learnable() {
        let g = grads
            .get(&key)
            .ok_or_else(|| Error::invalid(format!("no gradient for {key}")))?;
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "adam_step gradient" });
        }
    }
    state.t += 1;
    let t = state.t;
    for (key, slot, p) in store.learnable_mut() {
        let n = p.numel();
        let m = state.m.entry(key.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(key.clone()).or_insert_with(|| vec![0.0; n]);
        adam_update(p.data_mut(), grads[&key].data(), m, v, t, lr, cfg, slot.decays());
    }
    Ok(())
}
