//! Adam and the two learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    LinearDecay,
    Cosine,
}

/// Learning rate at step `t` of `max_steps`.
///
/// * linear decay: `base · (1 − t/T)`
/// * cosine: `base · ½ · (1 + cos(π·t/T))`
pub fn lr_at(scheduler: Scheduler, t: usize, base_lr: f64, max_steps: usize) -> Result<f64> {
    if t > max_steps {
        return Err(Error::Range(format!("step {t} beyond max_steps {max_steps}")));
    }
    let frac = t as f64 / max_steps as f64;
    Ok(match scheduler {
        Scheduler::LinearDecay => base_lr * (1.0 - frac),
        Scheduler::Cosine => base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
    })
}

/// Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl OptState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam_step got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
