//! Mel-frequency cepstral coefficients.
//!
//! 25 ms Hamming frames with a 10 ms hop, pre-emphasis 0.97, a 26-band mel
//! filterbank over [0, sr/2], log energies and an orthonormal DCT-II truncated
//! to 13 coefficients. A 200 ms window at 16 kHz yields 18 time steps.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{bail_validation, Result};

pub const N_MFCC: usize = 13;
pub const N_MEL: usize = 26;
const PRE_EMPHASIS: f64 = 0.97;
const LOG_FLOOR: f64 = 1e-10;

/// Reusable extractor for one sample rate.
pub struct MfccExtractor {
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MfccExtractor {
    pub fn new(sample_rate: u32) -> Result<Self> {
        if sample_rate < 1000 {
            bail_validation!("sample rate {sample_rate} too low for MFCC analysis");
        }
        let sr = sample_rate as f64;
        let frame_len = (0.025 * sr).round() as usize;
        let hop = (0.010 * sr).round() as usize;
        let n_fft = frame_len.next_power_of_two();
        let window = (0..frame_len)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (frame_len - 1) as f64).cos())
            .collect();

        // Triangular filters on FFT bins, evenly spaced on the mel scale.
        let n_bins = n_fft / 2 + 1;
        let mel_hi = hz_to_mel(sr / 2.0);
        let points: Vec<f64> = (0..N_MEL + 2)
            .map(|i| mel_to_hz(mel_hi * i as f64 / (N_MEL + 1) as f64) * n_fft as f64 / sr)
            .collect();
        let filters = (0..N_MEL)
            .map(|m| {
                let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
                (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64;
                        let w = if f > lo && f <= center {
                            (f - lo) / (center - lo)
                        } else if f > center && f < hi {
                            (hi - f) / (hi - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect()
            })
            .collect();

        let mut dct = vec![0.0; N_MFCC * N_MEL];
        for k in 0..N_MFCC {
            let norm = if k == 0 {
                (1.0 / N_MEL as f64).sqrt()
            } else {
                (2.0 / N_MEL as f64).sqrt()
            };
            for n in 0..N_MEL {
                dct[k * N_MEL + n] =
                    norm * (PI * k as f64 * (2 * n + 1) as f64 / (2 * N_MEL) as f64).cos();
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            sample_rate,
            frame_len,
            hop,
            n_fft,
            window,
            filters,
            dct,
            fft,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Number of analysis frames produced for `len` samples.
    pub fn time_steps(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    /// `[time_steps][13]` coefficients; short inputs are zero-padded to one frame.
    pub fn compute(&self, samples: &[f64]) -> Result<Vec<[f64; N_MFCC]>> {
        if samples.is_empty() {
            bail_validation!("MFCC input is empty");
        }
        let mut emph = Vec::with_capacity(samples.len());
        emph.push(samples[0]);
        for i in 1..samples.len() {
            emph.push(samples[i] - PRE_EMPHASIS * samples[i - 1]);
        }
        let steps = self.time_steps(samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        let mut log_mel = [0.0; N_MEL];
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let start = t * self.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                let v = if i < self.frame_len {
                    emph.get(start + i).copied().unwrap_or(0.0) * self.window[i]
                } else {
                    0.0
                };
                *c = Complex::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr() / self.n_fft as f64;
            }
            for (m, filt) in self.filters.iter().enumerate() {
                let e: f64 = filt.iter().map(|&(k, w)| w * power[k]).sum();
                log_mel[m] = (e + LOG_FLOOR).ln();
            }
            let mut row = [0.0; N_MFCC];
            for (k, r) in row.iter_mut().enumerate() {
                *r = self.dct[k * N_MEL..(k + 1) * N_MEL]
                    .iter()
                    .zip(&log_mel)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            out.push(row);
        }
        Ok(out)
    }
}

/// One-off MFCC of a sample window. Prefer [`MfccExtractor`] in loops.
pub fn compute_mfcc(window_samples: &[f64], sample_rate: u32) -> Result<Vec<[f64; N_MFCC]>> {
    MfccExtractor::new(sample_rate)?.compute(window_samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn silence_is_finite() {
        let m = compute_mfcc(&[0.0; 3200], 16000).unwrap();
        assert_eq!(m.len(), 18);
        assert!(m.iter().flatten().all(|v| v.is_finite()));
        // Log floor only: c0 = sqrt(26) * ln(1e-10), the rest vanish.
        let c0 = (N_MEL as f64).sqrt() * LOG_FLOOR.ln();
        assert!((m[0][0] - c0).abs() < 1e-9);
        assert!(m[0][1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn tone_is_bit_identical_across_calls() {
        let x: Vec<f64> = (0..3200)
            .map(|i| (2.0 * PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let a = compute_mfcc(&x, 16000).unwrap();
        let b = compute_mfcc(&x, 16000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_has_thirteen_columns() {
        let mut rng = crate::autograd::seeded_rng(3);
        let x: Vec<f64> = (0..3200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = compute_mfcc(&x, 16000).unwrap();
        assert!(m
            .iter()
            .all(|r| r.len() == 13 && r.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn filterbank_peaks_near_tone() {
        // A 1 kHz tone should put the largest filter energy near 1 kHz.
        let ex = MfccExtractor::new(16000).unwrap();
        let k_tone = (1000.0 * ex.n_fft as f64 / 16000.0).round() as usize;
        let best = ex
            .filters
            .iter()
            .enumerate()
            .max_by(|a, b| {
                let wa = a.1.iter().find(|(k, _)| *k == k_tone).map_or(0.0, |x| x.1);
                let wb = b.1.iter().find(|(k, _)| *k == k_tone).map_or(0.0, |x| x.1);
                wa.total_cmp(&wb)
            })
            .unwrap()
            .0;
        let center_hz = mel_to_hz(hz_to_mel(8000.0) * (best + 1) as f64 / (N_MEL + 1) as f64);
        assert!((center_hz - 1000.0).abs() < 150.0, "{center_hz}");
    }

    #[test]
    fn dct_rows_are_orthonormal() {
        let ex = MfccExtractor::new(16000).unwrap();
        for a in 0..N_MFCC {
            for b in 0..N_MFCC {
                let d: f64 = (0..N_MEL)
                    .map(|n| ex.dct[a * N_MEL + n] * ex.dct[b * N_MEL + n])
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }
}
