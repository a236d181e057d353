use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Optimizer hyperparameters, recorded in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let c = config;
        if !(c.lr > 0.0) || !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam hyperparameters {c:?}")));
        }
        Ok(Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn with_lr(lr: f64) -> Result<Self> {
        Self::new(AdamConfig { lr, ..Default::default() })
    }

    /// First and second moments of parameter `i`, once it has been stepped.
    pub fn moments(&self, i: usize) -> Option<(&Tensor, &Tensor)> {
        Some((self.m.get(i)?, self.v.get(i)?))
    }

    /// Updates every trainable parameter from its accumulated `grad`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let grads: Vec<Option<Tensor>> = store.iter().map(|p| Some(p.grad.clone())).collect();
        self.step_with(store, &grads)
    }

    /// Updates every trainable parameter from `grads`, given in store order.
    /// Frozen parameters are skipped and may have no gradient.
    pub fn step_with(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients supplied for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters but the store has {}",
                self.m.len(),
                store.len()
            )));
        }
        // validate everything before touching any state
        for (p, g) in store.iter().zip(grads) {
            if !p.trainable {
                continue;
            }
            let g = g
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("missing gradient for parameter {}", p.name)))?;
            if g.shape() != p.value.shape() {
                return Err(dim_err("adam_step", p.value.shape(), g.shape()));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in store.iter_mut().zip(grads).enumerate() {
            if !p.trainable {
                continue;
            }
            let g = g.as_ref().unwrap().data();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let (mh, vh) = (m[j] / c1, v[j] / c2);
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_is_about_lr() {
        let mut s = store(&[1.0, -2.0, 0.5]);
        s.by_name_mut("w").unwrap().grad = Tensor::new(vec![3], vec![3.0, -0.01, 1e-4]).unwrap();
        let before = s.by_name("w").unwrap().value.clone();
        let mut adam = AdamState::with_lr(0.001).unwrap();
        adam.step(&mut s).unwrap();
        for (a, b) in before.data().iter().zip(s.by_name("w").unwrap().value.data()) {
            let d = (a - b).abs();
            assert!((0.9e-3..=1e-3).contains(&d), "{d}");
        }
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[1.0, 2.0]);
        let before = s.clone();
        AdamState::with_lr(0.001).unwrap().step(&mut s).unwrap();
        assert_eq!(s.by_name("w").unwrap().value, before.by_name("w").unwrap().value);
    }

    fn run_quadratic(lr: f64, max_steps: usize) -> (f64, usize) {
        let mut s = store(&[0.0]);
        let mut adam = AdamState::with_lr(lr).unwrap();
        let mut steps = 0;
        while steps < max_steps {
            let theta = s.by_name("w").unwrap().value.data()[0];
            if (theta - 3.0).abs() < 1e-2 {
                break;
            }
            s.by_name_mut("w").unwrap().grad = Tensor::new(vec![1], vec![2.0 * (theta - 3.0)]).unwrap();
            adam.step(&mut s).unwrap();
            steps += 1;
        }
        assert_eq!(adam.t, steps as u64);
        (s.by_name("w").unwrap().value.data()[0], steps)
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        let (theta, steps) = run_quadratic(0.01, 2000);
        assert!((theta - 3.0).abs() < 1e-2, "theta={theta} after {steps} steps");
    }

    #[test]
    fn step_size_bounded_by_lr_under_consistent_gradient() {
        // a same-signed, shrinking gradient keeps |m̂|/√v̂ ≤ 1, so 2000 steps
        // at 1e-3 cannot travel further than 2 and never get near 3
        let (theta, steps) = run_quadratic(0.001, 2000);
        assert_eq!(steps, 2000);
        assert!(theta > 1.0 && theta <= 2.0 + 1e-9, "theta={theta}");
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = store(&[1.0]);
        let err = AdamState::with_lr(0.1).unwrap().step_with(&mut s, &[None]).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut s = store(&[1.0]);
        s.add("b", Tensor::ones(&[2])).unwrap();
        s.set_trainable(|n| n == "b");
        for p in s.iter_mut() {
            p.grad = Tensor::full(p.value.shape(), 1.0);
        }
        let mut adam = AdamState::with_lr(0.1).unwrap();
        adam.step_with(&mut s, &[None, Some(Tensor::ones(&[2]))]).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.data(), &[1.0]);
        assert_ne!(s.by_name("b").unwrap().value.data(), &[1.0, 1.0]);
        assert_eq!(adam.moments(1).unwrap().0.shape(), &[2]);
    }
}
