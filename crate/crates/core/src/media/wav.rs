//! Minimal RIFF/WAVE codec: integer PCM (8/16/24/32-bit) and 32-bit float in,
//! 16-bit PCM out.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WavData {
    pub sample_rate: u32,
    pub channels: u16,
    /// Interleaved samples scaled to [-1, 1].
    pub samples: Vec<f64>,
}

fn invalid(path: &Path, msg: impl Into<String>) -> Error {
    Error::Validation(format!("{}: {}", path.display(), msg.into()))
}

pub fn read_wav(path: &Path) -> Result<WavData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes).map_err(|m| invalid(path, m))
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

pub fn parse_wav(bytes: &[u8]) -> std::result::Result<WavData, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = (body_start + size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err("truncated fmt chunk".into());
                }
                let mut format = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                // WAVE_FORMAT_EXTENSIBLE: the real format is the first two
                // bytes of the subformat GUID.
                if format == 0xFFFE && body.len() >= 26 {
                    format = u16_at(body, 24);
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    let (format, channels, sample_rate, bits) = fmt.ok_or("missing fmt chunk")?;
    let data = data.ok_or("missing data chunk")?;
    if channels == 0 || sample_rate == 0 {
        return Err("zero channels or sample rate".into());
    }
    let samples: Vec<f64> = match (format, bits) {
        (1, 8) => data.iter().map(|&b| (b as f64 - 128.0) / 128.0).collect(),
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (1, 24) => data
            .chunks_exact(3)
            .map(|c| {
                let v = i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8;
                v as f64 / 8_388_608.0
            })
            .collect(),
        (1, 32) => data
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 / 2_147_483_648.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        _ => {
            return Err(format!(
                "unsupported encoding: format {format}, {bits} bits"
            ))
        }
    };
    Ok(WavData {
        sample_rate,
        channels,
        samples,
    })
}

/// Mono 16-bit PCM bytes; samples are clipped to [-1, 1].
pub fn encode_wav_pcm16(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    fs::write(path, encode_wav_pcm16(samples, sample_rate)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 0.9).collect();
        let back = parse_wav(&encode_wav_pcm16(&s, 16000)).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.channels, 1);
        for (a, b) in s.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_wav(b"not a wav file at all").is_err());
    }
}
