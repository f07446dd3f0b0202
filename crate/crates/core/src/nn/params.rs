use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Handle to an entry of a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

/// Named parameters with paired gradients and Adam state.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<Param>,
    step: u64,
}

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let n = value.len();
        self.entries.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(value.shape()),
            value,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Number of Adam steps taken.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    /// Name of the first entry holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|p| !p.value.is_finite())
            .map(|p| p.name.as_str())
    }

    /// One bias-corrected Adam update over every entry, then zeroes gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.entries {
            let values = p.value.data_mut();
            let grads = p.grad.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                let m = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * g * g;
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                values[i] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
                grads[i] = 0.0;
            }
        }
    }

    /// Copies values (not optimizer state) from a store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParameterStore) {
        assert_eq!(self.entries.len(), other.entries.len());
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            assert!(dst.value.same_shape(&src.value));
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", Tensor::vector(vec![value])).unwrap();
        (s, id)
    }

    #[test]
    fn names_are_unique() {
        let (mut s, _) = scalar_store(0.0);
        assert!(s.add("w", Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        for g in [0.3, -2.0, 1e-4] {
            let (mut s, id) = scalar_store(1.0);
            s.grad_mut(id).data_mut()[0] = g;
            s.adam_step(&cfg);
            // m̂ = g, v̂ = g² at t = 1
            let expected = 1.0 - cfg.lr * g / ((g * g).sqrt() + cfg.eps);
            assert!((s.value(id).data()[0] - expected).abs() < 1e-15);
            assert_eq!(s.get(id).grad.data()[0], 0.0);
            assert_eq!(s.step(), 1);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut s, id) = scalar_store(0.7);
        for _ in 0..5 {
            s.adam_step(&AdamConfig::default());
        }
        assert_eq!(s.value(id).data()[0], 0.7);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // Minimise f(θ) = θ² from θ = 1 with lr = 0.1.
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let (mut s, id) = scalar_store(1.0);
        for _ in 0..2 {
            let theta = s.value(id).data()[0];
            s.grad_mut(id).data_mut()[0] = 2.0 * theta;
            s.adam_step(&cfg);
        }
        // t=1: g=2, m=0.2, v=0.004, m̂=2, v̂=4, θ = 1 - 0.1*2/(2+1e-8)
        // t=2: g=2θ₁, m=0.9*0.2+0.1g, v=0.999*0.004+0.001g², m̂=m/0.19, v̂=v/0.001999
        let t1: f64 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        let g2 = 2.0 * t1;
        let m2 = 0.9 * 0.2 + 0.1 * g2;
        let v2 = 0.999 * 0.004 + 0.001 * g2 * g2;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat: f64 = v2 / (1.0 - 0.998001);
        let expected = t1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((t1 - 0.9000000005).abs() < 1e-12);
        assert!((s.value(id).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.800_412_228_691_792_7).abs() < 1e-12);
    }
}
