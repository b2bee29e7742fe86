//! Audio-visual synchronization network: a video tower over five stacked
//! mouth crops and an audio tower over the matching 200 ms MFCC window, both
//! mapped into one embedding space.

use crate::autograd::nn::{Conv2d, Linear};
use crate::autograd::{seeded_rng, Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, Result};
use crate::media::N_MFCC;

/// Frames per synchronization sample (200 ms at 25 fps).
pub const SYNC_FRAMES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SyncConfig {
    /// Side length the mouth crops are resized to.
    pub resolution: usize,
    pub base_channels: usize,
    pub embedding_dim: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            base_channels: 8,
            embedding_dim: 256,
        }
    }
}

/// Video and audio embeddings, `[N, D]` each.
#[derive(Clone, Debug)]
pub struct SyncPair {
    pub v: Tensor,
    pub a: Tensor,
}

impl SyncPair {
    /// Euclidean distance per row, `[N]`.
    pub fn distances(&self) -> Result<Vec<f64>> {
        let (n, d) = self.v.dims2()?;
        let (v, a) = (self.v.data(), self.a.data());
        Ok((0..n)
            .map(|i| {
                (0..d)
                    .map(|k| (v[i * d + k] - a[i * d + k]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

pub struct SyncDiscriminator {
    pub config: SyncConfig,
    pub store: ParamStore,
    video: Vec<Conv2d>,
    video_fc: Linear,
    audio: Vec<Conv2d>,
    audio_fc: Linear,
}

impl SyncDiscriminator {
    pub fn new(config: SyncConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let c = config.base_channels;
        let cin = 3 * SYNC_FRAMES;
        let video = vec![
            Conv2d::new(&mut pb.pp("video.conv0"), cin, c, 3, 2, 1)?,
            Conv2d::new(&mut pb.pp("video.conv1"), c, 2 * c, 3, 2, 1)?,
            Conv2d::new(&mut pb.pp("video.conv2"), 2 * c, 2 * c, 3, 2, 1)?,
        ];
        let video_fc = Linear::new(&mut pb.pp("video.fc"), 2 * c, config.embedding_dim, true)?;
        let audio = vec![
            Conv2d::rect(
                &mut pb.pp("audio.conv0"),
                N_MFCC,
                c,
                (1, 3),
                1,
                (0, 1),
                true,
            )?,
            Conv2d::rect(&mut pb.pp("audio.conv1"), c, 2 * c, (1, 3), 2, (0, 1), true)?,
        ];
        let audio_fc = Linear::new(&mut pb.pp("audio.fc"), 2 * c, config.embedding_dim, true)?;
        Ok(Self {
            config,
            store,
            video,
            video_fc,
            audio,
            audio_fc,
        })
    }

    /// Lower halves of `[5, 3, H, W]` frames resized to the tower resolution
    /// and stacked into `[1, 15, S, S]`.
    pub fn video_input(&self, frames: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = frames.dims4()?;
        if n != SYNC_FRAMES || c != 3 {
            bail_shape!(
                "sync video input needs [{SYNC_FRAMES}, 3, H, W], got {:?}",
                frames.shape()
            );
        }
        let lower = super::losses::lower_half(frames)?;
        let s = self.config.resolution;
        lower.resize_to(s, s)?.reshape(&[1, 3 * SYNC_FRAMES, s, s])
    }

    fn tower(layers: &[Conv2d], fc: &Linear, p: &Bound, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in layers {
            h = l.forward(p, &h)?.leaky_relu(0.2);
        }
        let (n, c, _, _) = h.dims4()?;
        fc.forward(p, &h.mean_keepdim(&[2, 3])?.reshape(&[n, c])?)
    }

    /// `video [N, 15, S, S]` and `audio [N, 13, 1, T]` to a pair of embeddings.
    pub fn embed(&self, p: &Bound, video: &Tensor, audio: &Tensor) -> Result<SyncPair> {
        let (n, c, h, w) = video.dims4()?;
        let s = self.config.resolution;
        if c != 3 * SYNC_FRAMES || h != s || w != s {
            bail_shape!(
                "sync video must be [N, {}, {s}, {s}], got {:?}",
                3 * SYNC_FRAMES,
                video.shape()
            );
        }
        let (na, ca, one, _) = audio.dims4()?;
        if na != n || ca != N_MFCC || one != 1 {
            bail_shape!(
                "sync audio must be [{n}, {N_MFCC}, 1, T], got {:?}",
                audio.shape()
            );
        }
        Ok(SyncPair {
            v: Self::tower(&self.video, &self.video_fc, p, video)?,
            a: Self::tower(&self.audio, &self.audio_fc, p, audio)?,
        })
    }
}

/// Embeddings of five frames and the audio window centered on the middle one.
pub fn sync_embed(
    d: &SyncDiscriminator,
    p: &Bound,
    frames: &Tensor,
    audio: &Tensor,
) -> Result<SyncPair> {
    d.embed(p, &d.video_input(frames)?, audio)
}
