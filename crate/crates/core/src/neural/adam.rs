use serde::{Deserialize, Serialize};

use super::tensor::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators, one flat buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    /// Nothing is modified if any gradient is non-finite or mis-shaped.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        if g.len() != self.m.len() {
            return Err(Error::shape("adam tensors", self.m.len(), g.len()));
        }
        for (t, m) in g.iter().zip(&self.m) {
            if t.data.len() != m.len() {
                return Err(Error::shape("adam tensor", m.len(), format!("{} ({})", t.data.len(), t.name)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", t.name)));
            }
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let targets = params.tensors_mut();
        if targets.len() != g.len() {
            return Err(Error::shape("adam params", g.len(), targets.len()));
        }
        for (((p, t), m), v) in targets.into_iter().zip(&g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = t.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    state.update(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -1.0];
        let mut s = AdamState::new(&p, AdamConfig::new(0.01));
        adam_step(&mut p, &vec![3.0, -0.5], &mut s).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] + 0.99).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.25, -4.0];
        let before = p.clone();
        let mut s = AdamState::new(&p, AdamConfig::new(0.1));
        adam_step(&mut p, &vec![0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_keeps_step_size() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(&p, AdamConfig::new(0.001));
        adam_step(&mut p, &vec![2.0], &mut s).unwrap();
        let first = p[0];
        adam_step(&mut p, &vec![2.0], &mut s).unwrap();
        let second = p[0] - first;
        assert!((second / first - 1.0).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = vec![0.0, 1.0];
        let mut s = AdamState::new(&p, AdamConfig::new(0.1));
        let err = adam_step(&mut p, &vec![f64::NAN, 0.0], &mut s).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, [0.0, 1.0]);
        assert!(adam_step(&mut p, &vec![0.0], &mut s).is_err());
    }
}
