//! Speech content encoder: two temporal convolutions and a bidirectional GRU
//! over an MFCC window, projected to a fixed-size embedding.

use std::path::Path;

use crate::autograd::nn::{Conv2d, GruCell, Linear};
use crate::autograd::{Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, Error, Result};
use crate::media::{MfccWindow, N_MFCC};

#[derive(Clone, Debug, PartialEq)]
pub struct SpeechEncoderConfig {
    pub conv_channels: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
}

impl Default for SpeechEncoderConfig {
    fn default() -> Self {
        Self {
            conv_channels: 16,
            hidden: 16,
            embedding_dim: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    pub config: SpeechEncoderConfig,
    conv1: Conv2d,
    conv2: Conv2d,
    gru_fwd: GruCell,
    gru_bwd: GruCell,
    proj: Linear,
}

/// A speech embedding `[N, D]` and the audio window each row came from.
#[derive(Clone, Debug)]
pub struct SpeechEmbedding {
    pub vectors: Tensor,
    pub source_window_index: Vec<usize>,
}

/// `[N, 13, 1, T]` batch from MFCC windows with a common length.
pub fn mfcc_batch(windows: &[&MfccWindow]) -> Result<Tensor> {
    let Some(first) = windows.first() else {
        bail_shape!("empty MFCC batch");
    };
    let t = first.time_steps();
    let mut data = Vec::with_capacity(windows.len() * N_MFCC * t);
    for w in windows {
        if w.time_steps() != t {
            bail_shape!(
                "MFCC windows of {} and {t} steps in one batch",
                w.time_steps()
            );
        }
        data.extend(w.flat_transposed());
    }
    Tensor::new(data, &[windows.len(), N_MFCC, 1, t])
}

impl SpeechEncoder {
    pub fn new(pb: &mut ParamBuilder, config: SpeechEncoderConfig) -> Result<Self> {
        let c = config.conv_channels;
        let h = config.hidden;
        Ok(Self {
            conv1: Conv2d::rect(&mut pb.pp("conv1"), N_MFCC, c, (1, 5), 1, (0, 2), true)?,
            conv2: Conv2d::rect(&mut pb.pp("conv2"), c, c, (1, 5), 2, (0, 2), true)?,
            gru_fwd: GruCell::new(&mut pb.pp("gru_fwd"), c, h)?,
            gru_bwd: GruCell::new(&mut pb.pp("gru_bwd"), c, h)?,
            proj: Linear::new(&mut pb.pp("proj"), 2 * h, config.embedding_dim, true)?,
            config,
        })
    }

    /// `[N, 13, 1, T]` MFCC batch to `[N, embedding_dim]`.
    pub fn forward(&self, p: &Bound, mfcc: &Tensor) -> Result<Tensor> {
        let (n, c, one, _) = mfcc.dims4()?;
        if c != N_MFCC || one != 1 {
            bail_shape!(
                "speech encoder expects [N, {N_MFCC}, 1, T], got {:?}",
                mfcc.shape()
            );
        }
        let x = self.conv1.forward(p, mfcc)?.leaky_relu(0.2);
        let x = self.conv2.forward(p, &x)?.leaky_relu(0.2);
        let (_, ch, _, steps) = x.dims4()?;
        let seq: Vec<Tensor> = (0..steps)
            .map(|s| x.narrow(3, s, 1)?.reshape(&[n, ch]))
            .collect::<Result<_>>()?;
        let h0 = Tensor::zeros(&[n, self.config.hidden]);
        let mut hf = h0.clone();
        for xs in &seq {
            hf = self.gru_fwd.step(p, xs, &hf)?;
        }
        let mut hb = h0;
        for xs in seq.iter().rev() {
            hb = self.gru_bwd.step(p, xs, &hb)?;
        }
        self.proj.forward(p, &Tensor::cat(&[hf, hb], 1)?)
    }

    pub fn encode(&self, p: &Bound, windows: &[&MfccWindow]) -> Result<SpeechEmbedding> {
        let vectors = self.forward(p, &mfcc_batch(windows)?)?;
        Ok(SpeechEmbedding {
            vectors,
            source_window_index: windows.iter().map(|w| w.center_frame_index).collect(),
        })
    }
}

/// Overwrite the encoder parameters (names starting with `prefix`) of `store`
/// from externally trained weights with matching names and shapes.
pub fn load_encoder_weights(store: &mut ParamStore, prefix: &str, path: &Path) -> Result<usize> {
    let archive = crate::checkpoint::read_archive(path)?;
    let mut loaded = 0;
    for e in store.entries_mut() {
        if let Some(rest) = e.name.strip_prefix(prefix) {
            let Some(src) = archive
                .tensors
                .iter()
                .find(|t| t.name == rest || t.name == e.name)
            else {
                continue;
            };
            if src.shape != e.shape {
                return Err(Error::Checkpoint(format!(
                    "encoder weight {} has shape {:?}, expected {:?}",
                    src.name, src.shape, e.shape
                )));
            }
            e.value.clone_from(&src.value);
            loaded += 1;
        }
    }
    Ok(loaded)
}
