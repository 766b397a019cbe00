use serde::{Deserialize, Serialize};

use super::param::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0) {
            return Err(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over every trainable parameter.
/// Frozen parameters, including their moment buffers, are left untouched.
pub fn adam_step(params: &mut ParamStore, config: &mut AdamConfig) {
    config.step_count += 1;
    let t = config.step_count as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for p in params.iter_mut().filter(|p| p.trainable) {
        let g = p.grad.data();
        let m = p.adam_m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = p.adam_v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (p.adam_m.data(), p.adam_v.data());
        let x = p.value.data_mut();
        for i in 0..x.len() {
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            x[i] -= config.learning_rate * mhat / (vhat.sqrt() + config.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_leaves_value() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(&[3], 2.0), true);
        store.get_mut(id).adam_m = Tensor::full(&[3], 1.0);
        let mut cfg = AdamConfig::default();
        adam_step(&mut store, &mut cfg);
        let p = store.get(id);
        // m decays to 0.9 and drives a small update; the raw gradient is zero.
        assert_abs_diff_eq!(p.adam_m.data()[0], 0.9, epsilon = 1e-15);
        assert_eq!(cfg.step_count, 1);

        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(&[3], 2.0), true);
        adam_step(&mut store, &mut cfg);
        assert_eq!(store.get(id).value.data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[2], vec![1.0, 1.0]).unwrap(), true);
        store.get_mut(id).grad = Tensor::new(&[2], vec![3.5, -0.02]).unwrap();
        let mut cfg = AdamConfig::default();
        adam_step(&mut store, &mut cfg);
        let v = store.get(id).value.data();
        assert_abs_diff_eq!(v[0], 1.0 - 1e-3, epsilon = 1e-9);
        assert_abs_diff_eq!(v[1], 1.0 + 1e-3, epsilon = 1e-9);
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut store = ParamStore::new();
        let id = store.add("sobel", Tensor::full(&[9], 1.5), false);
        store.get_mut(id).grad = Tensor::full(&[9], 10.0);
        let before = store.get(id).clone();
        let mut cfg = AdamConfig::default();
        for _ in 0..50 {
            adam_step(&mut store, &mut cfg);
        }
        assert_eq!(store.get(id), &before);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(5.0), true);
        let mut cfg = AdamConfig::default();
        // Adam moves at most ~lr per step, and less once the second moment
        // remembers the early large gradients: about 8500 steps from 5.
        let mut steps = 0;
        for _ in 0..10_000 {
            let x = store.get(id).value.data()[0];
            if x.abs() < 1e-2 {
                break;
            }
            store.get_mut(id).grad = Tensor::scalar(2.0 * x);
            adam_step(&mut store, &mut cfg);
            steps += 1;
        }
        let x = store.get(id).value.data()[0];
        assert!(x.abs() < 1e-2, "x = {x} after {steps} steps");
        assert!(steps > 4_900, "faster than the per-step bound allows: {steps}");
    }

    #[test]
    fn validation() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
