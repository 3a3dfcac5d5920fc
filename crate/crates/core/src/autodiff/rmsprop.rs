//! RMSprop:
//!
//! ```text
//! acc   ← decay·acc + (1 − decay)·g²
//! param ← param − lr·g / (sqrt(acc) + eps)
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Elementwise gradient clip applied before the update; `None` disables.
    pub clip: Option<f64>,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0007,
            decay: 0.95,
            epsilon: 1e-6,
            clip: None,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Per-parameter squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub config: RmsPropConfig,
    pub accumulators: Vec<Vec<f64>>,
    pub steps: u64,
}

impl RmsPropState {
    pub fn new(config: RmsPropConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            accumulators: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            steps: 0,
        })
    }

    /// Applies one update to every trainable parameter, then zeroes grads.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.accumulators.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.accumulators.len(),
                params.len()
            )));
        }
        let RmsPropConfig {
            learning_rate: lr,
            decay,
            epsilon: eps,
            clip,
        } = self.config;
        for (p, acc) in params.iter().zip(&self.accumulators) {
            if p.tensor.requires_grad() && p.tensor.grad().is_none() {
                return Err(Error::Contract(format!(
                    "parameter `{}` has no gradient",
                    p.name
                )));
            }
            if acc.len() != p.tensor.len() {
                return Err(Error::dim("rmsprop_step", &[acc.len()], p.tensor.shape()));
            }
        }
        for (t, acc) in params.tensors_mut().zip(&mut self.accumulators) {
            if !t.requires_grad() {
                continue;
            }
            let g: Vec<f64> = t
                .grad()
                .expect("checked above")
                .iter()
                .map(|&g| clip.map_or(g, |c| g.clamp(-c, c)))
                .collect();
            for ((v, a), g) in t.values_mut().iter_mut().zip(acc.iter_mut()).zip(&g) {
                *a = decay * *a + (1.0 - decay) * g * g;
                *v -= lr * g / (a.sqrt() + eps);
            }
            t.zero_grad();
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    fn store_with(values: Vec<f64>) -> (ParamStore, crate::autodiff::params::ParamId) {
        let mut store = ParamStore::new();
        let id = store.zeros("x", &[values.len()]);
        store.set_values(id, &values).unwrap();
        (store, id)
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let (mut store, id) = store_with(vec![1.0, -2.0]);
        store.get_mut(id).accumulate_grad(&[0.0, 0.0]);
        let mut opt = RmsPropState::new(RmsPropConfig::default(), &store).unwrap();
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).values(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_is_algebraically_forced() {
        let (mut store, id) = store_with(vec![0.5]);
        let g = 0.3;
        store.get_mut(id).accumulate_grad(&[g]);
        let cfg = RmsPropConfig {
            learning_rate: 0.01,
            decay: 0.9,
            epsilon: 1e-6,
            clip: None,
        };
        let mut opt = RmsPropState::new(cfg, &store).unwrap();
        opt.step(&mut store).unwrap();
        let expected = 0.5 - 0.01 * g / ((0.1 * g * g).sqrt() + 1e-6);
        assert!((store.get(id).values()[0] - expected).abs() < 1e-15);
        assert_eq!(store.get(id).grad().unwrap(), &[0.0]);
        assert!(opt.accumulators[0][0] >= 0.0);
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let (mut store, _) = store_with(vec![1.0]);
        let mut opt = RmsPropState::new(RmsPropConfig::default(), &store).unwrap();
        assert!(matches!(opt.step(&mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn descends_on_square() {
        let (mut store, id) = store_with(vec![1.0]);
        let cfg = RmsPropConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut opt = RmsPropState::new(cfg, &store).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let f = tape.dot(b[id], b[id]).unwrap();
            let fv = tape.value(f).values()[0];
            assert!(fv < prev);
            prev = fv;
            let g = tape.backward(f).unwrap();
            store.accumulate(&g);
            opt.step(&mut store).unwrap();
        }
        let x = store.get(id).values()[0];
        assert!(x * x < prev);
    }

    #[test]
    fn clipping_bounds_the_gradient() {
        let (mut store, id) = store_with(vec![0.0]);
        store.get_mut(id).accumulate_grad(&[100.0]);
        let cfg = RmsPropConfig {
            learning_rate: 1.0,
            decay: 0.5,
            epsilon: 0.0 + 1e-12,
            clip: Some(1.0),
        };
        let mut opt = RmsPropState::new(cfg, &store).unwrap();
        opt.step(&mut store).unwrap();
        assert!((opt.accumulators[0][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let store = ParamStore::new();
        for cfg in [
            RmsPropConfig { decay: 1.0, ..Default::default() },
            RmsPropConfig { learning_rate: 0.0, ..Default::default() },
            RmsPropConfig { epsilon: -1.0, ..Default::default() },
        ] {
            assert!(RmsPropState::new(cfg, &store).is_err());
        }
    }
}
