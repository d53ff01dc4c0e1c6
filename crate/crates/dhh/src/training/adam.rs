//! Bias-corrected Adam updates over network parameters.

use crate::graph::Tensor;
use crate::nets::NetworkParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment accumulators, shaped like the parameters they
/// update, plus the step counter driving bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. `grads` align with `params.tensors()`; the caller is
/// responsible for rejecting non-finite gradients first.
pub fn adam_step(params: &mut NetworkParams, grads: &[Tensor], state: &mut AdamState, lr: f64) {
    assert!(lr > 0.0, "learning rate must be positive");
    let tensors = params.tensors_mut();
    assert_eq!(tensors.len(), grads.len(), "gradient layout mismatch");
    assert_eq!(tensors.len(), state.m.len(), "optimizer state layout mismatch");

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);

    for ((param, grad), (m, v)) in tensors
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch");
        let p = param.data_mut();
        let g = grad.data();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_params, MlpConfig};

    fn zero_grads(params: &NetworkParams) -> Vec<Tensor> {
        params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let config = MlpConfig::tanh(2, vec![3], 1);
        let mut params = init_params(&config, 1).unwrap();
        let snapshot = params.clone();
        let grads = zero_grads(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01);
        assert_eq!(params, snapshot);
        assert_eq!(state.step_count(), 1);
        assert!(state.m.iter().all(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        // m_hat = g, v_hat = g^2 after one step, so the update is
        // -lr * g / (|g| + eps)
        let config = MlpConfig::tanh(1, vec![], 1);
        let mut params = NetworkParams::zeros(&config);
        let mut state = AdamState::new(&params);
        let mut grads = zero_grads(&params);
        grads[0].data_mut()[0] = 0.37;
        adam_step(&mut params, &grads, &mut state, 0.01);
        let got = params.layers[0].weight.data()[0];
        assert!((got + 0.01).abs() < 1e-6, "expected ~-0.01, got {got}");
    }

    #[test]
    fn updates_are_deterministic() {
        let config = MlpConfig::tanh(2, vec![4], 2);
        let grads: Vec<Tensor> = init_params(&config, 9).unwrap().tensors().into_iter().cloned().collect();
        let run = || {
            let mut params = init_params(&config, 5).unwrap();
            let mut state = AdamState::new(&params);
            for _ in 0..10 {
                adam_step(&mut params, &grads, &mut state, 1e-3);
            }
            params
        };
        assert_eq!(run(), run());
    }
}
