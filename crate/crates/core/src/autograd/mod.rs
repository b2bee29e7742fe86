//! Small reverse-mode automatic differentiation engine over dense f64 tensors.
//!
//! Graphs are rebuilt on every forward pass. Trainable state lives in
//! [`ParamStore`]s, which are bound into a graph with [`ParamStore::bind`] and
//! updated by an optimizer from the gradients of the bound leaves.

mod conv;
pub mod gradcheck;
pub mod nn;
mod ops;
pub mod optim;
mod params;
mod tensor;

pub use optim::{Adam, AdamConfig};
pub use params::{Bound, Init, ParamBuilder, ParamEntry, ParamId, ParamStore};
pub use tensor::{Gradients, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used for every initialization and sampling decision.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
