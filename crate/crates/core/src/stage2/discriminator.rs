//! Two-head patch discriminator: a shallow local head and a deep global head,
//! each with its own CAM auxiliary classifier.

use super::cam::CamAttention;
use crate::autograd::nn::Conv2d;
use crate::autograd::{seeded_rng, Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, bail_validation, Result};

pub const LOCAL_DEPTH: usize = 2;
pub const GLOBAL_DEPTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticConfig {
    pub resolution: usize,
    pub base_channels: usize,
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        let step = 1 << GLOBAL_DEPTH;
        if self.resolution < step || self.resolution % step != 0 {
            bail_validation!(
                "critic resolution must be a positive multiple of {step}, got {}",
                self.resolution
            );
        }
        if self.base_channels == 0 {
            bail_validation!("critic needs at least one channel");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `[N, 1, h, w]` raw (unsquashed) scores.
    pub scores: Tensor,
    /// `[N]`
    pub cam_logit: Tensor,
    pub attention_map: Tensor,
}

#[derive(Clone, Debug)]
pub struct CriticOutput {
    pub local: HeadOutput,
    pub global: HeadOutput,
}

impl CriticOutput {
    pub fn scores(&self) -> [&Tensor; 2] {
        [&self.local.scores, &self.global.scores]
    }

    pub fn cam_logits(&self) -> [&Tensor; 2] {
        [&self.local.cam_logit, &self.global.cam_logit]
    }
}

#[derive(Clone, Debug)]
pub struct CriticHead {
    pub convs: Vec<Conv2d>,
    pub cam: CamAttention,
    pub score: Conv2d,
}

impl CriticHead {
    fn new(pb: &mut ParamBuilder, nf: usize, depth: usize) -> Result<Self> {
        let mut convs = Vec::with_capacity(depth);
        let mut cin = 3;
        for i in 0..depth {
            let cout = nf << i;
            convs.push(Conv2d::new(
                &mut pb.pp(&format!("conv{i}")),
                cin,
                cout,
                4,
                2,
                1,
            )?);
            cin = cout;
        }
        Ok(Self {
            convs,
            cam: CamAttention::new(&mut pb.pp("cam"), cin)?,
            score: Conv2d::new(&mut pb.pp("score"), cin, 1, 3, 1, 1)?,
        })
    }

    fn forward(&self, p: &Bound, x: &Tensor) -> Result<HeadOutput> {
        let mut x = x.clone();
        for c in &self.convs {
            x = c.forward(p, &x)?.leaky_relu(0.2);
        }
        let cam = self.cam.forward(p, &x)?;
        Ok(HeadOutput {
            scores: self.score.forward(p, &cam.attended)?,
            cam_logit: cam.cam_logit,
            attention_map: cam.attention_map,
        })
    }

    /// Receptive field of one score in input pixels.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (k, s) in self.convs.iter().chain([&self.score]).map(Conv2d::rf_step) {
            rf += (k - 1) * jump;
            jump *= s;
        }
        rf
    }
}

#[derive(Clone, Debug)]
pub struct Critic {
    pub store: ParamStore,
    pub config: CriticConfig,
    pub local: CriticHead,
    pub global: CriticHead,
}

impl Critic {
    pub fn new(config: CriticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let local = CriticHead::new(&mut pb.pp("local"), config.base_channels, LOCAL_DEPTH)?;
        let global = CriticHead::new(&mut pb.pp("global"), config.base_channels, GLOBAL_DEPTH)?;
        Ok(Self {
            store,
            config,
            local,
            global,
        })
    }

    pub fn forward(&self, p: &Bound, frames: &Tensor) -> Result<CriticOutput> {
        let (_, c, h, w) = frames.dims4()?;
        let r = self.config.resolution;
        if c != 3 || h != r || w != r {
            bail_shape!(
                "critic expects [N, 3, {r}, {r}] frames, got {:?}",
                frames.shape()
            );
        }
        Ok(CriticOutput {
            local: self.local.forward(p, frames)?,
            global: self.global.forward(p, frames)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn critic() -> Critic {
        Critic::new(
            CriticConfig {
                resolution: 32,
                base_channels: 4,
            },
            5,
        )
        .unwrap()
    }

    fn frames() -> Tensor {
        Tensor::new(
            (0..2 * 3 * 32 * 32)
                .map(|i| ((i as f64) * 0.43).cos())
                .collect(),
            &[2, 3, 32, 32],
        )
        .unwrap()
    }

    #[test]
    fn heads_are_finite_and_deterministic() {
        let d = critic();
        let p = d.store.bind(false);
        let a = d.forward(&p, &frames()).unwrap();
        let b = d.forward(&p, &frames()).unwrap();
        assert_eq!(a.local.scores.shape(), &[2, 1, 8, 8]);
        assert_eq!(a.global.scores.shape(), &[2, 1, 2, 2]);
        for (x, y) in a.scores().iter().zip(b.scores()) {
            assert!(x.all_finite());
            assert_eq!(x.data(), y.data());
        }
        assert_eq!(a.cam_logits()[1].shape(), &[2]);
    }

    #[test]
    fn local_head_sees_less_than_global() {
        let d = critic();
        assert_eq!(d.local.receptive_field(), 18);
        assert_eq!(d.global.receptive_field(), 78);
        assert!(d.local.receptive_field() < d.global.receptive_field());
    }
}
