use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// Hyperparameters of the bias-corrected Adam update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
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

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Real> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", config.learning_rate)));
        }
        if !(config.epsilon > 0.0) {
            return Err(Error::invalid("adam epsilon must be positive"));
        }
        let zeros = || store.iter().map(|(_, t)| vec![T::ZERO; t.len()]).collect();
        Ok(OptimizerState {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        })
    }

    /// Applies one update from the gradients accumulated in `store`.
    /// Parameters without a gradient are left untouched, but the step counter
    /// still advances. Fails without modifying anything if a gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        for (id, (name, t)) in store.iter().enumerate() {
            if t.len() != self.first_moment[id].len() {
                return Err(Error::shape(format!("moment shape mismatch for {name}")));
            }
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let step_size = T::from_f64(learning_rate / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(epsilon);
        for id in 0..store.len() {
            let tensor = store.tensor_mut(id);
            let Some(g) = tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let (m, v) = (&mut self.first_moment[id], &mut self.second_moment[id]);
            for (((p, &gi), mi), vi) in tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + ob1 * gi;
                *vi = b2 * *vi + ob2 * gi * gi;
                *p -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_f64(vec![values.len()], values).unwrap().with_grad());
        store.tensor_mut(id).accumulate_grad(grads).unwrap();
        store
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let mut store = store_with(&[0.5, -1.5], &[0.0, 0.0]);
        let mut opt = OptimizerState::new(&store, AdamConfig::default()).unwrap();
        opt.step(&mut store).unwrap();
        assert_eq!(store.tensor(0).data(), &[0.5, -1.5]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = store_with(&[1.0, 1.0, 1.0], &[1.0, -2.0, 0.5]);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&store, cfg).unwrap();
        opt.step(&mut store).unwrap();
        let d: Vec<f64> = store.tensor(0).data().iter().map(|p| p - 1.0).collect();
        // m̂ = g and v̂ = g² at step one, so Δθ = −lr·sign(g) up to ε.
        assert!((d[0] + 0.1).abs() < 1e-6);
        assert!((d[1] - 0.1).abs() < 1e-6);
        assert!((d[2] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut store = store_with(&[1.0], &[f64::NAN]);
        let mut opt = OptimizerState::new(&store, AdamConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut store), Err(Error::NonFinite(_))));
        assert_eq!(opt.step, 0);
        assert_eq!(store.tensor(0).data(), &[1.0]);
    }
}
