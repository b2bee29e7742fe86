//! Attention-guided translation generator: a downsampling encoder, a CAM
//! attention block, and a decoder of AdaLIN residual and upsampling blocks.

use super::adalin::AdaLin;
use super::cam::CamAttention;
use crate::autograd::nn::{instance_norm, Conv2d, Linear};
use crate::autograd::{seeded_rng, Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, bail_validation, Result};

/// Initial mixing coefficient of the residual-block AdaLIN layers.
pub const RESIDUAL_RHO_INIT: f64 = 0.9;
/// Initial mixing coefficient of the upsampling-block layers.
pub const UPSAMPLE_RHO_INIT: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TranslatorConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub residual_blocks: usize,
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || self.resolution % 4 != 0 {
            bail_validation!(
                "translator resolution must be a multiple of 4 and at least 8, got {}",
                self.resolution
            );
        }
        if self.base_channels == 0 || self.residual_blocks == 0 {
            bail_validation!("translator needs at least one channel and one residual block");
        }
        Ok(())
    }
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            base_channels: 16,
            residual_blocks: 4,
        }
    }
}

#[derive(Clone, Debug)]
struct ResidualBlock {
    conv1: Conv2d,
    norm1: AdaLin,
    conv2: Conv2d,
    norm2: AdaLin,
}

#[derive(Clone, Debug)]
struct UpBlock {
    conv: Conv2d,
    norm: AdaLin,
}

#[derive(Clone, Debug)]
pub struct TranslationOutput {
    /// `[N, 3, R, R]` in [-1, 1].
    pub frames: Tensor,
    /// `[N]` logit of the generator's source-domain classifier.
    pub cam_logit: Tensor,
    /// `[N, 1, R/4, R/4]`, detached.
    pub attention_map: Tensor,
}

#[derive(Clone, Debug)]
pub struct Translator {
    pub store: ParamStore,
    pub config: TranslatorConfig,
    stem: Conv2d,
    down: Vec<Conv2d>,
    cam: CamAttention,
    gamma: Linear,
    beta: Linear,
    blocks: Vec<ResidualBlock>,
    up: Vec<UpBlock>,
    out: Conv2d,
}

impl Translator {
    pub fn new(config: TranslatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let nf = config.base_channels;
        let c = 4 * nf;
        let stem = Conv2d::new(&mut pb.pp("stem"), 3, nf, 3, 1, 1)?;
        let down = vec![
            Conv2d::new(&mut pb.pp("down0"), nf, 2 * nf, 4, 2, 1)?,
            Conv2d::new(&mut pb.pp("down1"), 2 * nf, c, 4, 2, 1)?,
        ];
        let cam = CamAttention::new(&mut pb.pp("cam"), c)?;
        let gamma = Linear::new(&mut pb.pp("gamma"), c, c, true)?;
        let beta = Linear::new(&mut pb.pp("beta"), c, c, true)?;
        let blocks = (0..config.residual_blocks)
            .map(|i| {
                let mut b = pb.pp(&format!("res{i}"));
                Ok(ResidualBlock {
                    conv1: Conv2d::new(&mut b.pp("conv1"), c, c, 3, 1, 1)?,
                    norm1: AdaLin::new(&mut b.pp("norm1"), c, RESIDUAL_RHO_INIT, false)?,
                    conv2: Conv2d::new(&mut b.pp("conv2"), c, c, 3, 1, 1)?,
                    norm2: AdaLin::new(&mut b.pp("norm2"), c, RESIDUAL_RHO_INIT, false)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let up = [(c, 2 * nf), (2 * nf, nf)]
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let mut b = pb.pp(&format!("up{i}"));
                Ok(UpBlock {
                    conv: Conv2d::new(&mut b.pp("conv"), cin, cout, 3, 1, 1)?,
                    norm: AdaLin::new(&mut b.pp("norm"), cout, UPSAMPLE_RHO_INIT, true)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Conv2d::new(&mut pb.pp("out"), nf, 3, 3, 1, 1)?;
        Ok(Self {
            store,
            config,
            stem,
            down,
            cam,
            gamma,
            beta,
            blocks,
            up,
            out,
        })
    }

    pub fn forward(&self, p: &Bound, frames: &Tensor) -> Result<TranslationOutput> {
        let (n, ch, h, w) = frames.dims4()?;
        let r = self.config.resolution;
        if ch != 3 || h != r || w != r {
            bail_shape!(
                "translator expects [N, 3, {r}, {r}] frames, got {:?}",
                frames.shape()
            );
        }
        let mut x = instance_norm(&self.stem.forward(p, frames)?)?.relu();
        for d in &self.down {
            x = instance_norm(&d.forward(p, &x)?)?.relu();
        }
        let cam = self.cam.forward(p, &x)?;
        let x = cam.attended;
        let c = x.shape()[1];
        let code = x.mean_keepdim(&[2, 3])?.reshape(&[n, c])?;
        // Offset by one so an untrained head starts near plain normalization.
        let gamma = self.gamma.forward(p, &code)?.affine(1.0, 1.0);
        let beta = self.beta.forward(p, &code)?;
        let style = Some((&gamma, &beta));
        let mut x = x;
        for b in &self.blocks {
            let y = b.norm1.forward(p, &b.conv1.forward(p, &x)?, style)?.relu();
            let y = b.norm2.forward(p, &b.conv2.forward(p, &y)?, style)?;
            x = x.add(&y)?;
        }
        for u in &self.up {
            let y = u.conv.forward(p, &x.upsample_nearest2d(2)?)?;
            x = u.norm.forward(p, &y, None)?.relu();
        }
        Ok(TranslationOutput {
            frames: self.out.forward(p, &x)?.tanh(),
            cam_logit: cam.cam_logit,
            attention_map: cam.attention_map,
        })
    }

    /// Frames only, with parameters bound as constants.
    pub fn translate(&self, frames: &Tensor) -> Result<Tensor> {
        Ok(self.forward(&self.store.bind(false), frames)?.frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::{max_relative_error, spread_coords};

    fn tiny(resolution: usize) -> TranslatorConfig {
        TranslatorConfig {
            resolution,
            base_channels: 2,
            residual_blocks: 4,
        }
    }

    fn frames(n: usize, r: usize, k: f64) -> Tensor {
        Tensor::new(
            (0..n * 3 * r * r)
                .map(|i| ((i as f64) * k).sin() * 0.8)
                .collect(),
            &[n, 3, r, r],
        )
        .unwrap()
    }

    #[test]
    fn shapes_range_and_cycle() {
        let g = Translator::new(
            TranslatorConfig {
                base_channels: 4,
                ..TranslatorConfig::default()
            },
            1,
        )
        .unwrap();
        let x = frames(2, 64, 0.13);
        let out = g.forward(&g.store.bind(false), &x).unwrap();
        assert_eq!(out.frames.shape(), &[2, 3, 64, 64]);
        assert_eq!(out.cam_logit.shape(), &[2]);
        assert_eq!(out.attention_map.shape(), &[2, 1, 16, 16]);
        assert!(out.frames.data().iter().all(|v| v.abs() <= 1.0));
        let back = Translator::new(g.config, 2).unwrap();
        assert_eq!(
            back.translate(&g.translate(&x).unwrap()).unwrap().shape(),
            x.shape()
        );
        assert_eq!(g.translate(&x).unwrap().data(), out.frames.data());
        assert!(g.translate(&frames(1, 32, 0.1)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Translator::new(tiny(16), 3).unwrap();
        assert!(
            g.store.num_scalars() <= 10_000,
            "{} params",
            g.store.num_scalars()
        );
        let x = frames(2, 16, 0.29);
        let target = frames(2, 16, 0.71);
        let loss = |p: &Bound| -> Result<Tensor> {
            let out = g.forward(p, &x)?;
            out.frames
                .sub(&target)?
                .sqr()
                .mean_all()?
                .add(&out.cam_logit.sqr().mean_all()?)
        };
        let p = g.store.bind(true);
        let grads: Vec<f64> = p.grads(&loss(&p).unwrap().backward().unwrap()).concat();
        let x0 = g.store.flat_values();
        let coords = spread_coords(x0.len(), 80);
        let err = max_relative_error(
            |v| {
                let mut s = g.store.clone();
                s.set_flat_values(v)?;
                loss(&s.bind(false))?.to_scalar()
            },
            &x0,
            &grads,
            &coords,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }
}
