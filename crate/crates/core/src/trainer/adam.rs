//! Adam with bias correction.
//!
//! ```text
//! m_t = β1 m_{t-1} + (1 - β1) g
//! v_t = β2 v_{t-1} + (1 - β2) g²
//! p  -= lr · (m_t / (1 - β1^t)) / (sqrt(v_t / (1 - β2^t)) + ε)
//! ```

use crate::error::{Error, Result};
use crate::nn::{Grads, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn from_config(config: &crate::config::RunConfig) -> Self {
        AdamHyper {
            lr: config.lr,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        }
    }
}

/// First and second moments mirroring a parameter store, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Applies one update in place. A non-finite gradient rejects the whole step
/// and leaves both parameters and state untouched. `phase`/`step` only label
/// the error.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut AdamState<T>,
    hp: AdamHyper,
    phase: &'static str,
    step: u64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.get(i).shape() || state.m[i].shape() != g.shape() || state.v[i].shape() != g.shape() {
            return Err(Error::Contract(format!(
                "adam: shape mismatch for `{}`",
                params.name(i)
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric {
                phase,
                step,
                message: format!("non-finite gradient for `{}`", params.name(i)),
            });
        }
    }
    let t = state.t + 1;
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let (b1, b2) = (T::from_f64(hp.beta1), T::from_f64(hp.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - hp.beta1), T::from_f64(1.0 - hp.beta2));
    let step_size = T::from_f64(hp.lr / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(hp.eps);
    for (i, g) in grads.iter().enumerate() {
        let p = params.get_mut(i).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            p[j] -= step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
        }
    }
    state.t = t;
    Ok(())
}
