//! Adaptive layer-instance normalization: a learned per-channel blend of
//! instance and layer normalization followed by an affine transform.

use crate::autograd::nn::{instance_norm, layer_norm};
use crate::autograd::{Bound, Init, ParamBuilder, ParamId, ParamStore, Tensor};
use crate::error::{bail_shape, Result};

/// Suffix of every mixing-coefficient parameter; used to clip them after
/// optimizer steps.
pub const RHO_SUFFIX: &str = ".rho";

/// `gamma * (rho * IN(f) + (1 - rho) * LN(f)) + beta`.
///
/// `rho` is `[C]`; `gamma` and `beta` are `[C]` (shared) or `[N, C]`
/// (per sample).
pub fn adalin(f: &Tensor, rho: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (n, c, _, _) = f.dims4()?;
    let per_channel = |t: &Tensor, what: &str| -> Result<Tensor> {
        match t.shape() {
            [k] if *k == c => t.reshape(&[1, c, 1, 1]),
            [m, k] if *m == n && *k == c => t.reshape(&[n, c, 1, 1]),
            s => bail_shape!("adalin {what} must be [{c}] or [{n}, {c}], got {s:?}"),
        }
    };
    let rho = per_channel(rho, "rho")?;
    let mixed = rho
        .mul(&instance_norm(f)?)?
        .add(&rho.affine(-1.0, 1.0).mul(&layer_norm(f)?)?)?;
    mixed
        .mul(&per_channel(gamma, "gamma")?)?
        .add(&per_channel(beta, "beta")?)
}

/// AdaLIN layer with a learned `rho`. With `affine`, gamma and beta are
/// learned parameters too; otherwise they are supplied per call.
#[derive(Clone, Debug)]
pub struct AdaLin {
    pub rho: ParamId,
    pub affine: Option<(ParamId, ParamId)>,
    pub channels: usize,
}

impl AdaLin {
    pub fn new(
        pb: &mut ParamBuilder,
        channels: usize,
        rho_init: f64,
        affine: bool,
    ) -> Result<Self> {
        let rho = pb.param("rho", &[channels], Init::Const(rho_init), 0)?;
        let affine = if affine {
            Some((
                pb.param("gamma", &[channels], Init::Const(1.0), 0)?,
                pb.param("beta", &[channels], Init::Zeros, 0)?,
            ))
        } else {
            None
        };
        Ok(Self {
            rho,
            affine,
            channels,
        })
    }

    /// Uses the layer's own gamma/beta when it has them, else `style`.
    pub fn forward(
        &self,
        p: &Bound,
        x: &Tensor,
        style: Option<(&Tensor, &Tensor)>,
    ) -> Result<Tensor> {
        let rho = p.get(self.rho);
        match (self.affine, style) {
            (Some((g, b)), _) => adalin(x, rho, p.get(g), p.get(b)),
            (None, Some((g, b))) => adalin(x, rho, g, b),
            (None, None) => {
                bail_shape!("adalin layer without affine parameters needs gamma and beta")
            }
        }
    }
}

/// Clip every `rho` parameter of `store` into [0, 1].
pub fn clip_rho(store: &mut ParamStore) {
    for e in store.entries_mut() {
        if e.name.ends_with(RHO_SUFFIX) {
            for v in &mut e.value {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
}
