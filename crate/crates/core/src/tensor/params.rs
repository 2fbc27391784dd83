use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{shape_err, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// A parameter value with its Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<S> {
    pub value: Tensor<S>,
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
}

/// Named parameters plus optimizer state.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S> {
    entries: BTreeMap<String, ParamEntry<S>>,
    step_count: u64,
}

/// Adam hyperparameters. Weight decay is the coupled L2 form: `β·θ` is added
/// to the gradient before the moment updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(TensorError::Usage(format!(
                "duplicate parameter name {name}"
            )));
        }
        let zeros = Tensor::zeros(value.shape());
        self.entries.insert(
            name,
            ParamEntry {
                value,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
        );
        Ok(())
    }

    /// Moves every entry of `other` into this store.
    pub fn merge(&mut self, other: ParamStore<S>) -> Result<()> {
        for (name, entry) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(TensorError::Usage(format!(
                    "duplicate parameter name {name}"
                )));
            }
            self.entries.insert(name, entry);
        }
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<S>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| TensorError::Usage(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| TensorError::Usage(format!("unknown parameter {name}")))
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<S>> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, steps: u64) {
        self.step_count = steps;
    }

    /// `‖θ‖²` over every entry.
    pub fn l2_norm_sq(&self) -> f64 {
        self.entries
            .values()
            .map(|e| e.value.sum_squares().to_f64c())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.is_finite())
    }

    /// One Adam step with bias correction.
    pub fn adam_step(
        &mut self,
        grads: &BTreeMap<String, Tensor<S>>,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if !(cfg.learning_rate >= 0.0) {
            return Err(TensorError::Config(format!(
                "learning rate {} must be non-negative",
                cfg.learning_rate
            )));
        }
        if cfg.weight_decay < 0.0 {
            return Err(TensorError::Config(format!(
                "weight decay {} must be non-negative",
                cfg.weight_decay
            )));
        }
        if grads.len() != self.entries.len()
            || grads.keys().zip(self.entries.keys()).any(|(a, b)| a != b)
        {
            return Err(TensorError::Usage(
                "gradients are not keyed like the parameter store".into(),
            ));
        }
        for (name, g) in grads {
            let e = &self.entries[name];
            if g.shape() != e.value.shape() {
                return Err(shape_err(
                    "adam_step",
                    format!("{name} {:?}", e.value.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = S::from_f64c(cfg.beta1);
        let b2 = S::from_f64c(cfg.beta2);
        let one = S::one();
        let c1 = S::from_f64c(1.0 - cfg.beta1.powi(t));
        let c2 = S::from_f64c(1.0 - cfg.beta2.powi(t));
        let lr = S::from_f64c(cfg.learning_rate);
        let eps = S::from_f64c(cfg.epsilon);
        let wd = S::from_f64c(cfg.weight_decay);
        for (name, g) in grads {
            let e = self.entries.get_mut(name).expect("checked above");
            let values = e.value.data_mut();
            let m = e.first_moment.data_mut();
            let v = e.second_moment.data_mut();
            for i in 0..values.len() {
                let gi = g.data()[i] + wd * values[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// `self ← τ·online + (1−τ)·self` for every entry.
    pub fn polyak_from(&mut self, online: &ParamStore<S>, tau: f64) -> Result<()> {
        let tau_s = S::from_f64c(tau);
        let keep = S::from_f64c(1.0 - tau);
        for (name, e) in self.entries.iter_mut() {
            let src = online.value(name)?;
            if src.shape() != e.value.shape() {
                return Err(shape_err(
                    "polyak",
                    format!("{:?}", e.value.shape()),
                    format!("{:?}", src.shape()),
                ));
            }
            for (t, &o) in e.value.data_mut().iter_mut().zip(src.data()) {
                *t = tau_s * o + keep * *t;
            }
        }
        Ok(())
    }

    /// Copy with values converted to another precision; moments reset.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.value.cast())
                .expect("names are unique");
        }
        out.step_count = self.step_count;
        out
    }

    /// Values only, without optimizer moments.
    pub fn values_only(&self) -> ParamStore<S> {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.value.clone())
                .expect("names are unique");
        }
        out.step_count = self.step_count;
        out
    }
}
