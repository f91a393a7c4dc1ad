use serde::{Deserialize, Serialize};

use super::{AdError, Tensor};

pub const ADAGRAD_EPS: f64 = 1e-10;

fn check_shapes(params: &[Tensor], grads: &[Tensor], state: &[Tensor]) -> Result<(), AdError> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(AdError::ShapeMismatch("params, grads and optimizer state differ in count".into()));
    }
    for ((p, g), s) in params.iter().zip(grads).zip(state) {
        if p.shape() != g.shape() || p.shape() != s.shape() {
            return Err(AdError::ShapeMismatch(format!("update shapes {:?} / {:?} / {:?}", p.shape(), g.shape(), s.shape())));
        }
    }
    Ok(())
}

/// One Adagrad descent step: `acc += g^2; p -= lr * g / (sqrt(acc) + eps)`.
pub fn adagrad_update(params: &mut [Tensor], grads: &[Tensor], accumulators: &mut [Tensor], lr: f64) -> Result<(), AdError> {
    if !(lr >= 0.0) {
        return Err(AdError::ShapeMismatch(format!("learning rate {lr} must be non-negative")));
    }
    check_shapes(params, grads, accumulators)?;
    for ((p, g), acc) in params.iter_mut().zip(grads).zip(accumulators.iter_mut()) {
        for ((pv, &gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
            *av += gv * gv;
            *pv -= lr * gv / (av.sqrt() + ADAGRAD_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam step. `step` counts from 1.
pub fn adam_update(
    params: &mut [Tensor],
    grads: &[Tensor],
    first: &mut [Tensor],
    second: &mut [Tensor],
    step: u64,
    lr: f64,
    hyper: AdamHyper,
) -> Result<(), AdError> {
    check_shapes(params, grads, first)?;
    check_shapes(params, grads, second)?;
    let c1 = 1.0 - hyper.beta1.powi(step as i32);
    let c2 = 1.0 - hyper.beta2.powi(step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + hyper.eps);
        }
    }
    Ok(())
}
