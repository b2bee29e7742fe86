//! Next-frame predictor: a small UNet over channel-concatenated past frames.

use crate::autograd::nn::Conv2d;
use crate::autograd::{seeded_rng, Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, bail_validation, Result};

pub const DEFAULT_PAST_FRAMES: usize = 2;
const LAST_FRAME_BOUND: f64 = 0.999;
const OUT_INIT_SCALE: f64 = 0.1;

fn atanh(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(1.0, 1.0)
        .div(&x.affine(-1.0, 1.0))?
        .ln()
        .scale(0.5))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorConfig {
    pub past_frames: usize,
    pub resolution: usize,
    pub base_channels: usize,
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.past_frames == 0 {
            bail_validation!("predictor needs at least one past frame");
        }
        if self.resolution < 4 || self.resolution % 4 != 0 {
            bail_validation!(
                "predictor resolution must be a multiple of 4, got {}",
                self.resolution
            );
        }
        if self.base_channels == 0 {
            bail_validation!("predictor needs at least one channel");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub store: ParamStore,
    pub config: PredictorConfig,
    enc: [Conv2d; 3],
    dec: [Conv2d; 2],
    out: Conv2d,
}

impl Predictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let nf = config.base_channels;
        let enc = [
            Conv2d::new(&mut pb.pp("enc0"), 3 * config.past_frames, nf, 3, 1, 1)?,
            Conv2d::new(&mut pb.pp("enc1"), nf, 2 * nf, 4, 2, 1)?,
            Conv2d::new(&mut pb.pp("enc2"), 2 * nf, 4 * nf, 4, 2, 1)?,
        ];
        // Decoder level k sees its upsampled input concatenated with encoder level k.
        let dec = [
            Conv2d::new(&mut pb.pp("dec1"), 4 * nf, 2 * nf, 3, 1, 1)?,
            Conv2d::new(&mut pb.pp("dec0"), 4 * nf, nf, 3, 1, 1)?,
        ];
        let out = Conv2d::new(&mut pb.pp("out"), 2 * nf, 3, 3, 1, 1)?;
        // Start close to repeating the last frame.
        store
            .get_mut(out.weight)
            .value
            .iter_mut()
            .for_each(|w| *w *= OUT_INIT_SCALE);
        Ok(Self {
            store,
            config,
            enc,
            dec,
            out,
        })
    }

    /// Concatenate `t` frames `[N, 3, R, R]` along channels.
    pub fn stack(&self, frames: &[Tensor]) -> Result<Tensor> {
        let t = self.config.past_frames;
        if frames.len() != t {
            bail_shape!(
                "predictor takes exactly {t} past frames, got {}",
                frames.len()
            );
        }
        Tensor::cat(frames, 1)
    }

    /// `x̂_{t+1}` from `x_1..x_t`.
    pub fn predict(&self, p: &Bound, frames: &[Tensor]) -> Result<Tensor> {
        self.forward(p, &self.stack(frames)?)
    }

    /// `[N, 3t, R, R]` to `[N, 3, R, R]` in (-1, 1).
    pub fn forward(&self, p: &Bound, stacked: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = stacked.dims4()?;
        let r = self.config.resolution;
        if c != 3 * self.config.past_frames || h != r || w != r {
            bail_shape!(
                "predictor expects [N, {}, {r}, {r}], got {:?}",
                3 * self.config.past_frames,
                stacked.shape()
            );
        }
        let e0 = self.enc[0].forward(p, stacked)?.leaky_relu(0.2);
        let e1 = self.enc[1].forward(p, &e0)?.leaky_relu(0.2);
        let e2 = self.enc[2].forward(p, &e1)?.leaky_relu(0.2);
        let d1 = self.dec[0].forward(p, &e2.upsample_nearest2d(2)?)?.relu();
        let d1 = Tensor::cat(&[d1, e1], 1)?;
        let d0 = self.dec[1].forward(p, &d1.upsample_nearest2d(2)?)?.relu();
        let d0 = Tensor::cat(&[d0, e0], 1)?;
        // The network predicts a change to the most recent frame, added in
        // pre-tanh space so the output stays in (-1, 1).
        let last = stacked.narrow(1, 3 * (self.config.past_frames - 1), 3)?;
        Ok(atanh(&last.clamp(-LAST_FRAME_BOUND, LAST_FRAME_BOUND))?
            .add(&self.out.forward(p, &d0)?)?
            .tanh())
    }
}
