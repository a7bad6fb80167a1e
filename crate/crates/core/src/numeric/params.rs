//! Named parameter storage with Adam state.
//!
//! Parameters live in a `BTreeMap` keyed by name so iteration order — and
//! therefore every downstream numeric artifact — is deterministic.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::rng::Rng;
use crate::numeric::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    /// Adam first-moment estimate.
    pub m: Tensor,
    /// Adam second-moment estimate.
    pub v: Tensor,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        ParamEntry { value, grad, m, v }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
    /// Number of Adam steps taken (bias-correction exponent).
    pub step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.entries.insert(name.to_string(), ParamEntry::new(value));
    }

    /// Insert a parameter initialized uniformly in [-scale, scale).
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut Rng) {
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len)
            .map(|_| (rng.next_f64() * 2.0 - 1.0) * scale)
            .collect();
        self.insert(name, Tensor::from_vec(shape, data).expect("sized from shape"));
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            for g in entry.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// One Adam update over all parameters from the accumulated gradients.
    /// Gradients are cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for entry in self.entries.values_mut() {
            let n = entry.value.len();
            for i in 0..n {
                let g = entry.grad.data()[i];
                let m = cfg.beta1 * entry.m.data()[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * entry.v.data()[i] + (1.0 - cfg.beta2) * g * g;
                entry.m.data_mut()[i] = m;
                entry.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                entry.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            for g in entry.grad.data_mut() {
                *g = 0.0;
            }
        }
    }
}
