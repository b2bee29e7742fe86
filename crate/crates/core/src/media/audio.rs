use std::f64::consts::PI;
use std::path::Path;

use super::wav;
use crate::error::{bail_validation, Result};

/// Canonical sampling rate of every clip flowing through the pipeline.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with amplitudes in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            bail_validation!("sample rate must be positive");
        }
        if samples.is_empty() {
            bail_validation!("audio clip has no samples");
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            bail_validation!("audio sample {i} is not finite");
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn resampled(&self, target_rate: u32) -> Result<AudioClip> {
        AudioClip::new(
            resample(&self.samples, self.sample_rate, target_rate)?,
            target_rate,
        )
    }

    pub fn save_wav(&self, path: &Path) -> Result<()> {
        wav::write_wav_pcm16(path, &self.samples, self.sample_rate)
    }
}

/// Read a WAV file, downmix to mono and resample to `target_rate`.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioClip> {
    let data = wav::read_wav(path)?;
    let ch = data.channels as usize;
    if data.samples.len() < ch {
        bail_validation!("{}: zero-length audio", path.display());
    }
    let mono: Vec<f64> = data
        .samples
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f64>() / ch as f64)
        .collect();
    AudioClip::new(mono, data.sample_rate)?.resampled(target_rate)
}

const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Hann-windowed sinc resampling. Output length is
/// `round(len * to / from)`; downsampling low-passes at the new Nyquist rate.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == 0 || to == 0 {
        bail_validation!("sample rates must be positive ({from} -> {to})");
    }
    if from == to {
        return Ok(samples.to_vec());
    }
    let ratio = to as f64 / from as f64;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half = SINC_ZERO_CROSSINGS / cutoff;
    let n = samples.len() as isize;
    let out = (0..out_len)
        .map(|t| {
            let center = t as f64 / ratio;
            let lo = (center - half).ceil() as isize;
            let hi = (center + half).floor() as isize;
            let mut acc = 0.0;
            for k in lo.max(0)..=hi.min(n - 1) {
                let x = center - k as f64;
                let arg = cutoff * x;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * arg).sin() / (PI * arg)
                };
                let win = 0.5 + 0.5 * (PI * x / half).cos();
                acc += samples[k as usize] * cutoff * sinc * win;
            }
            acc
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> Vec<f64> {
        let n = (rate as f64 * secs) as usize;
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() * 0.5)
            .collect()
    }

    #[test]
    fn resample_length_follows_rate_ratio() {
        for (from, to, n) in [
            (48_000, 16_000, 48_000),
            (44_100, 16_000, 44_100),
            (8_000, 16_000, 999),
        ] {
            let out = resample(&vec![0.1; n], from, to).unwrap();
            let want = (n as f64 * to as f64 / from as f64).round() as usize;
            assert_eq!(out.len(), want);
        }
    }

    #[test]
    fn resample_preserves_in_band_tone() {
        let x = tone(440.0, 48_000, 0.25);
        let y = resample(&x, 48_000, 16_000).unwrap();
        let want = tone(440.0, 16_000, 0.25);
        // Edges are affected by the finite kernel; compare the interior.
        for i in 200..y.len() - 200 {
            assert!(
                (y[i] - want[i]).abs() < 5e-3,
                "sample {i}: {} vs {}",
                y[i],
                want[i]
            );
        }
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }
}
