use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment buffers and step count for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update of every parameter in `params`.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.tensors().iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || m.len() != p.len() {
            return Err(Error::Contract(format!(
                "adam_step: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![v]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_store(0.7);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::vector(vec![0.0])], &mut st).unwrap();
        assert_eq!(p.tensors()[0].data(), &[0.7]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 1e-3] {
            let mut p = scalar_store(0.0);
            let mut st = AdamState::new(AdamConfig::with_lr(0.001), &p);
            adam_step(&mut p, &[Tensor::vector(vec![g])], &mut st).unwrap();
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            let expected = -0.001 * g / (g.abs() + 1e-8);
            assert!((p.tensors()[0].data()[0] - expected).abs() < 1e-15);
            assert!((p.tensors()[0].data()[0] + 0.001 * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn second_step_not_larger_with_constant_gradient() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let g = [Tensor::vector(vec![0.5])];
        adam_step(&mut p, &g, &mut st).unwrap();
        let first = p.tensors()[0].data()[0];
        adam_step(&mut p, &g, &mut st).unwrap();
        let second = p.tensors()[0].data()[0] - first;
        assert!(second.abs() <= first.abs() + 1e-12);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let r = adam_step(&mut p, &[Tensor::vector(vec![0.0, 1.0])], &mut st);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
