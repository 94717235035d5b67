use serde::{Deserialize, Serialize};

use super::{MathError, ParamGrads, ParamSet, Tensor};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Moment estimates and hyperparameters of the Adam optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            learning_rate,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut ParamSet, grads: &ParamGrads, state: &mut AdamState) -> Result<(), MathError> {
    grads.check_matches(params)?;
    if state.first.len() != params.len() {
        return Err(MathError::Dimension(format!(
            "optimizer tracks {} tensors, model has {}",
            state.first.len(),
            params.len()
        )));
    }
    for (id, (m, v)) in params.ids().zip(state.first.iter().zip(&state.second)) {
        if m.shape() != params.get(id).shape() || v.shape() != params.get(id).shape() {
            return Err(MathError::Dimension(format!(
                "optimizer moments for `{}` have shape {:?}, parameter has {:?}",
                params.name(id),
                m.shape(),
                params.get(id).shape()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);

    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = grads.get(id).data();
        let m = state.first[k].data_mut();
        let v = state.second[k].data_mut();
        let theta = params.get_mut(id).data_mut();
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
