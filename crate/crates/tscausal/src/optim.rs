//! Adam optimizer over named parameter tensors.
//!
//! Moment buffers are keyed by parameter name so the optimizer stays
//! decoupled from any particular parameter struct; the trainer hands it
//! `(name, tensor)` pairs each step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters for Adam.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    /// Step size.
    pub learning_rate: f64,
    /// Exponential decay for the first-moment estimate.
    pub beta1: f64,
    /// Exponential decay for the second-moment estimate.
    pub beta2: f64,
    /// Denominator fuzz guarding against division by zero.
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Collect every invalid field as a human-readable violation.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!(
                "optimizer learning_rate must be positive and finite, got {}",
                self.learning_rate
            ));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                v.push(format!("optimizer {name} must lie in [0, 1), got {beta}"));
            }
        }
        if !(self.epsilon > 0.0) {
            v.push(format!("optimizer epsilon must be positive, got {}", self.epsilon));
        }
        v
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

/// A mutable named parameter handed to [`AdamState::step`].
pub type ParamRef<'a> = (String, &'a mut Tensor);

impl AdamState {
    /// Fresh state with zeroed moments; buffers are allocated lazily the
    /// first time each parameter is seen.
    pub fn new(config: AdamConfig) -> AdamState {
        AdamState {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Number of completed steps.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one Adam update to every `(name, parameter)` pair using the
    /// gradient registered under the same name. Parameters without a
    /// gradient entry are an error: silently skipping one would mask a
    /// wiring bug in the backward pass.
    pub fn step(&mut self, params: Vec<ParamRef<'_>>, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        let lr = self.config.learning_rate;
        let eps = self.config.epsilon;

        for (name, param) in params {
            let grad = grads.get(&name).ok_or_else(|| {
                Error::arg(format!("no gradient registered for parameter '{name}'"))
            })?;
            if grad.shape() != param.shape() {
                return Err(Error::shape(format!(
                    "gradient for '{name}' has shape {:?}, parameter has {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape()));
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| Tensor::zeros(param.shape()));
            let (md, vd, pd, gd) = (
                m.data_mut(),
                v.data_mut(),
                param.data_mut(),
                grad.data(),
            );
            for i in 0..gd.len() {
                let g = gd[i];
                md[i] = b1 * md[i] + (1.0 - b1) * g;
                vd[i] = b2 * vd[i] + (1.0 - b2) * g * g;
                let mhat = md[i] / bias1;
                let vhat = vd[i] / bias2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_of(name: &str, t: Tensor) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert(name.to_string(), t);
        m
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_learning_rate() {
        // With defaults and g = 1, bias correction makes mhat = vhat = 1, so
        // the parameter moves by -lr / (1 + eps) ~ -1e-3.
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut state = AdamState::new(AdamConfig::default());
        let grads = grads_of("w", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        state.step(vec![("w".to_string(), &mut p)], &grads).unwrap();
        let delta = p.data()[0];
        assert!((delta + 1e-3).abs() < 1e-9, "delta {delta}");
        assert_eq!(state.steps_taken(), 1);
    }

    #[test]
    fn two_steps_same_gradient_keep_direction() {
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut state = AdamState::new(AdamConfig::default());
        let grads = grads_of("w", Tensor::from_vec(&[1], vec![2.5]).unwrap());
        state.step(vec![("w".to_string(), &mut p)], &grads).unwrap();
        let after_one = p.data()[0];
        state.step(vec![("w".to_string(), &mut p)], &grads).unwrap();
        assert!(after_one < 0.0);
        assert!(p.data()[0] < after_one, "second step continues downhill");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::new(AdamConfig::default());
        let grads = BTreeMap::new();
        assert!(state.step(vec![("w".to_string(), &mut p)], &grads).is_err());
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize (w - 3)^2; after enough steps w should approach 3.
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut state = AdamState::new(AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..500 {
            let w = p.data()[0];
            let grads = grads_of("w", Tensor::from_vec(&[1], vec![2.0 * (w - 3.0)]).unwrap());
            state.step(vec![("w".to_string(), &mut p)], &grads).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-2, "w = {}", p.data()[0]);
    }

    #[test]
    fn config_violations_are_collected() {
        let bad = AdamConfig {
            learning_rate: 0.0,
            beta1: 1.5,
            beta2: -0.1,
            epsilon: 0.0,
        };
        assert_eq!(bad.violations().len(), 4);
        assert!(AdamConfig::default().violations().is_empty());
    }
}
