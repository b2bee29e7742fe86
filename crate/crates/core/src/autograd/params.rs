use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::{Gradients, Tensor};
use crate::error::{bail_shape, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

/// Named, persistent parameter values of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn push(&mut self, name: String, shape: Vec<usize>, value: Vec<f64>) -> Result<ParamId> {
        if shape.iter().product::<usize>() != value.len() {
            bail_shape!("param {name}: {} values for shape {:?}", value.len(), shape);
        }
        if self.find(&name).is_some() {
            return Err(crate::Error::Validation(format!(
                "duplicate parameter {name}"
            )));
        }
        self.entries.push(ParamEntry { name, shape, value });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Overwrite values from another store with the identical layout.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(crate::Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(crate::Error::Checkpoint(format!(
                    "parameter layout mismatch: {} {:?} vs {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
            a.value.clone_from(&b.value);
        }
        Ok(())
    }

    /// Materialize every parameter as a graph leaf for one forward pass.
    pub fn bind(&self, trainable: bool) -> Bound {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                if trainable {
                    Tensor::variable(e.value.clone(), &e.shape)
                } else {
                    Tensor::new(e.value.clone(), &e.shape)
                }
                .expect("store entries are shape-checked on insert")
            })
            .collect();
        Bound { tensors }
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.value.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            bail_shape!(
                "{} values for {} parameters",
                flat.len(),
                self.num_scalars()
            );
        }
        let mut off = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            e.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Parameters of one network bound into the current graph.
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Per-parameter gradients, zero-filled where the graph did not reach.
    pub fn grads(&self, g: &Gradients) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| g.get_or_zeros(t)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Normal with std `gain / sqrt(fan_in)`; fan-in is the product of all
    /// dims but the first (conv) or the first dim (linear, `[in, out]`).
    FanIn(f64),
}

pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn pp(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    pub fn param(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        fan_in: usize,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n)
                .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Init::FanIn(gain) => {
                let std = gain / (fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        };
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.push(full, shape.to_vec(), value)
    }
}
