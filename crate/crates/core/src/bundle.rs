//! Named scalar losses of one training step.

use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct LossBundle {
    entries: Vec<(String, Tensor)>,
}

impl LossBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace `name`.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(e) => e.1 = value,
            None => self.entries.push((name.to_string(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar values in insertion order.
    pub fn values(&self) -> Vec<(String, f64)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.data().first().copied().unwrap_or(f64::NAN)))
            .collect()
    }

    /// Error naming the first non-finite loss, if any.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.entries {
            if let Some(&v) = t.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    loss: name.clone(),
                    value: v,
                });
            }
        }
        Ok(())
    }
}
