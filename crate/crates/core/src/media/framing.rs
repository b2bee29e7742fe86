//! Per-video-frame audio windows.

use super::audio::AudioClip;
use super::mfcc::{MfccExtractor, N_MFCC};
use crate::error::{bail_validation, Result};

/// Audio window length used by both the speech encoder and the sync network.
pub const CANONICAL_WINDOW_MS: f64 = 200.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MfccWindow {
    pub coefficients: Vec<[f64; N_MFCC]>,
    pub center_frame_index: usize,
}

impl MfccWindow {
    pub fn time_steps(&self) -> usize {
        self.coefficients.len()
    }

    /// Row-major `[time_steps * 13]` copy.
    pub fn flat(&self) -> Vec<f64> {
        self.coefficients.iter().flatten().copied().collect()
    }

    /// `[13 * time_steps]` copy, coefficient-major (one row per coefficient).
    pub fn flat_transposed(&self) -> Vec<f64> {
        let t = self.time_steps();
        let mut out = vec![0.0; N_MFCC * t];
        for (s, row) in self.coefficients.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[c * t + s] = *v;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioWindowSequence {
    pub windows: Vec<MfccWindow>,
    pub stride_samples: usize,
    pub window_samples: usize,
}

impl AudioWindowSequence {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Geometry of the per-frame windowing for one sample rate and frame rate.
///
/// The signal is padded by `W/2` zeros at both ends; window `i` covers padded
/// samples `[i*stride, i*stride + W)`, i.e. it is centered on unpadded sample
/// `i*stride`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AudioFraming {
    pub sample_rate: u32,
    pub fps: f64,
    pub stride: usize,
    pub window: usize,
}

impl AudioFraming {
    pub fn new(sample_rate: u32, fps: f64, window_ms: f64) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            bail_validation!("fps must be positive, got {fps}");
        }
        if !(window_ms > 0.0) {
            bail_validation!("window length must be positive, got {window_ms} ms");
        }
        if sample_rate == 0 {
            bail_validation!("sample rate must be positive");
        }
        let stride = (sample_rate as f64 / fps).round() as usize;
        let window = (window_ms * sample_rate as f64 / 1000.0).round() as usize;
        if stride == 0 || window < 2 {
            bail_validation!("degenerate framing: stride {stride}, window {window}");
        }
        Ok(Self {
            sample_rate,
            fps,
            stride,
            window,
        })
    }

    pub fn half(&self) -> usize {
        self.window / 2
    }

    pub fn overlap(&self) -> usize {
        self.window.saturating_sub(self.stride)
    }

    /// Number of video frames covered by `n_samples` of audio.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        (n_samples as f64 * self.fps / self.sample_rate as f64).round() as usize
    }

    /// Center of window `i` in the unpadded signal.
    pub fn center(&self, i: usize) -> usize {
        i * self.stride
    }

    /// Samples of window `i`, with zeros outside the signal.
    pub fn window_samples(&self, samples: &[f64], i: usize) -> Vec<f64> {
        let start = self.center(i) as isize - self.half() as isize;
        (0..self.window)
            .map(|k| {
                let j = start + k as isize;
                if j >= 0 && (j as usize) < samples.len() {
                    samples[j as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// MFCC window for every video frame the clip covers.
pub fn frame_audio_windows(
    clip: &AudioClip,
    fps: f64,
    window_ms: f64,
) -> Result<AudioWindowSequence> {
    let framing = AudioFraming::new(clip.sample_rate(), fps, window_ms)?;
    let n = clip.samples().len();
    if n < framing.window {
        bail_validation!(
            "clip of {n} samples is shorter than one {window_ms} ms window ({} samples)",
            framing.window
        );
    }
    let extractor = MfccExtractor::new(clip.sample_rate())?;
    let windows = (0..framing.frame_count(n))
        .map(|i| {
            Ok(MfccWindow {
                coefficients: extractor.compute(&framing.window_samples(clip.samples(), i))?,
                center_frame_index: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AudioWindowSequence {
        windows,
        stride_samples: framing.stride,
        window_samples: framing.window,
    })
}
