//! Audio-conditioned generator: the speech embedding seeds the coarsest
//! activation and every residual block is modulated by the identity image
//! through SPADE.

use super::encoder::{SpeechEncoder, SpeechEncoderConfig};
use super::spade::Spade;
use crate::autograd::nn::{Conv2d, Linear};
use crate::autograd::{seeded_rng, Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, Result};

pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Output side length; a multiple of 16.
    pub resolution: usize,
    pub base_channels: usize,
    pub spade_hidden: usize,
    pub encoder: SpeechEncoderConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            base_channels: 16,
            spade_hidden: 16,
            encoder: SpeechEncoderConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct SpadeResBlock {
    norm0: Spade,
    conv0: Conv2d,
    norm1: Spade,
    conv1: Conv2d,
    shortcut: Option<(Spade, Conv2d)>,
}

impl SpadeResBlock {
    fn new(pb: &mut ParamBuilder, cin: usize, cout: usize, hidden: usize) -> Result<Self> {
        let mid = cin.min(cout);
        let shortcut = if cin != cout {
            Some((
                Spade::new(&mut pb.pp("norm_s"), cin, hidden)?,
                Conv2d::rect(&mut pb.pp("conv_s"), cin, cout, (1, 1), 1, (0, 0), false)?,
            ))
        } else {
            None
        };
        Ok(Self {
            norm0: Spade::new(&mut pb.pp("norm0"), cin, hidden)?,
            conv0: Conv2d::new(&mut pb.pp("conv0"), cin, mid, 3, 1, 1)?,
            norm1: Spade::new(&mut pb.pp("norm1"), mid, hidden)?,
            conv1: Conv2d::new(&mut pb.pp("conv1"), mid, cout, 3, 1, 1)?,
            shortcut,
        })
    }

    fn forward(&self, p: &Bound, x: &Tensor, identity: &Tensor) -> Result<Tensor> {
        let dx = self
            .conv0
            .forward(p, &self.norm0.forward(p, x, identity)?.leaky_relu(0.2))?;
        let dx = self
            .conv1
            .forward(p, &self.norm1.forward(p, &dx, identity)?.leaky_relu(0.2))?;
        let skip = match &self.shortcut {
            Some((norm, conv)) => conv.forward(p, &norm.forward(p, x, identity)?)?,
            None => x.clone(),
        };
        skip.add(&dx)
    }
}

#[derive(Clone, Debug)]
pub struct SpadeGenerator {
    pub config: GeneratorConfig,
    pub store: ParamStore,
    pub encoder: SpeechEncoder,
    fc: Linear,
    blocks: Vec<SpadeResBlock>,
    conv_out: Conv2d,
    seed_res: usize,
    seed_channels: usize,
}

impl SpadeGenerator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        if config.resolution < 16 || config.resolution % 16 != 0 {
            bail_shape!(
                "generator resolution must be a positive multiple of 16, got {}",
                config.resolution
            );
        }
        let nf = config.base_channels;
        let channels = [4 * nf, 4 * nf, 2 * nf, nf, (nf / 2).max(4)];
        let seed_res = config.resolution / 16;
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let encoder = SpeechEncoder::new(&mut pb.pp("encoder"), config.encoder.clone())?;
        let fc = Linear::new(
            &mut pb.pp("fc"),
            config.encoder.embedding_dim,
            channels[0] * seed_res * seed_res,
            true,
        )?;
        let mut blocks = Vec::new();
        let mut cin = channels[0];
        for (i, &cout) in channels.iter().enumerate() {
            blocks.push(SpadeResBlock::new(
                &mut pb.pp(&format!("block{i}")),
                cin,
                cout,
                config.spade_hidden,
            )?);
            cin = cout;
        }
        let conv_out = Conv2d::new(&mut pb.pp("conv_out"), cin, 3, 3, 1, 1)?;
        Ok(Self {
            seed_channels: channels[0],
            config,
            store,
            encoder,
            fc,
            blocks,
            conv_out,
            seed_res,
        })
    }

    /// `identity [N, 3, R, R]` in [-1, 1] and `embedding [N, D]` to a frame
    /// `[N, 3, R, R]` in [-1, 1].
    pub fn forward_embedding(
        &self,
        p: &Bound,
        identity: &Tensor,
        embedding: &Tensor,
    ) -> Result<Tensor> {
        let (n, c, h, w) = identity.dims4()?;
        let r = self.config.resolution;
        if c != 3 || h != r || w != r {
            bail_shape!(
                "identity must be [N, 3, {r}, {r}], got {:?}",
                identity.shape()
            );
        }
        let (en, d) = embedding.dims2()?;
        if en != n || d != self.config.encoder.embedding_dim {
            bail_shape!(
                "embedding must be [{n}, {}], got {:?}",
                self.config.encoder.embedding_dim,
                embedding.shape()
            );
        }
        let s = self.seed_res;
        let mut x = self
            .fc
            .forward(p, embedding)?
            .reshape(&[n, self.seed_channels, s, s])?;
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            let side = s << i;
            x = block.forward(p, &x, &identity.resize_to(side, side)?)?;
            if i < last {
                x = x.upsample_nearest2d(2)?;
            }
        }
        Ok(self.conv_out.forward(p, &x.leaky_relu(0.2))?.tanh())
    }

    /// Identity images plus `[N, 13, 1, T]` MFCC windows to frames.
    pub fn forward(&self, p: &Bound, identity: &Tensor, mfcc: &Tensor) -> Result<Tensor> {
        let emb = self.encoder.forward(p, mfcc)?;
        self.forward_embedding(p, identity, &emb)
    }
}

/// One frame per embedding row.
pub fn generate_frame(
    generator: &SpadeGenerator,
    identity: &Tensor,
    embedding: &Tensor,
) -> Result<Tensor> {
    generator.forward_embedding(&generator.store.bind(false), identity, embedding)
}
