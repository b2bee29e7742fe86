//! Synthetic talking faces with known ground truth, used by the tests, the
//! benchmarks and the demo dataset command.
//!
//! Human-domain clips carry speech-like audio whose loudness drives the mouth
//! opening, periodic blinks, small head sway and exact eye landmarks.
//! Animation-domain clips share the face layout but use flat colors and
//! outlines, and carry no audio.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::landmarks::{EyeLandmarkSet, FaceLandmarks, SidecarLandmarkProvider, LANDMARK_FILE};
use crate::media::{
    save_clip, AudioClip, Image, Pose, TalkingClip, CANONICAL_FPS, CANONICAL_SAMPLE_RATE, POSE_FILE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyDomain {
    Human,
    Anime,
}

/// Normalized eye centers; they fall inside the default boxes of
/// [`crate::landmarks::EyeRegionLandmarkProvider`].
pub const EYE_CENTERS: [[f64; 2]; 2] = [[0.34, 0.37], [0.66, 0.37]];
const EYE_HALF_WIDTH: f64 = 0.075;
const EYE_HALF_HEIGHT: f64 = 0.04;
const MOUTH_CENTER: [f64; 2] = [0.5, 0.72];

/// Per-frame controls of a rendered face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceState {
    /// Mouth opening in [0, 1].
    pub mouth: f64,
    /// Eye opening in [0, 1]; 0 is a shut eye.
    pub eyes: f64,
    /// Horizontal head offset as a fraction of the width.
    pub sway: f64,
}

#[derive(Clone, Debug)]
pub struct ToyClip {
    pub clip: TalkingClip,
    pub landmarks: Vec<FaceLandmarks>,
    pub poses: Vec<Pose>,
    pub states: Vec<FaceState>,
}

struct Palette {
    background: [f64; 3],
    skin: [f64; 3],
    eye: [f64; 3],
    mouth: [f64; 3],
    outline: Option<[f64; 3]>,
    shading: f64,
}

fn palette(domain: ToyDomain, seed: u64) -> Palette {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_FACE);
    let j = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-s..s);
    match domain {
        ToyDomain::Human => Palette {
            background: [
                0.35 + j(&mut rng, 0.1),
                0.42 + j(&mut rng, 0.1),
                0.5 + j(&mut rng, 0.1),
            ],
            skin: [
                0.85 + j(&mut rng, 0.08),
                0.66 + j(&mut rng, 0.08),
                0.52 + j(&mut rng, 0.08),
            ],
            eye: [0.12, 0.1, 0.1],
            mouth: [0.45, 0.12, 0.15],
            outline: None,
            shading: 0.18,
        },
        ToyDomain::Anime => Palette {
            background: [0.92, 0.88 + j(&mut rng, 0.06), 0.7 + j(&mut rng, 0.1)],
            skin: [1.0, 0.86 + j(&mut rng, 0.05), 0.78 + j(&mut rng, 0.05)],
            eye: [
                0.15 + j(&mut rng, 0.1),
                0.3 + j(&mut rng, 0.15),
                0.6 + j(&mut rng, 0.2),
            ],
            mouth: [0.8, 0.25, 0.3],
            outline: Some([0.1, 0.05, 0.05]),
            shading: 0.0,
        },
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Eye landmarks of a lens-shaped eye: corners at `cx -/+ a`, upper and lower
/// points at a third of the way in from each corner.
fn eye_points(cx: f64, cy: f64, a: f64, open: f64) -> EyeLandmarkSet {
    let k = (1.0f64 - 0.25).sqrt();
    EyeLandmarkSet::new([
        [cx - a, cy],
        [cx - a / 2.0, cy - open * k],
        [cx + a / 2.0, cy - open * k],
        [cx + a, cy],
        [cx + a / 2.0, cy + open * k],
        [cx - a / 2.0, cy + open * k],
    ])
}

/// Render one face and its eye landmarks (pixel coordinates, `[x, y]`).
pub fn render_face(
    domain: ToyDomain,
    seed: u64,
    size: usize,
    state: FaceState,
) -> (Image, FaceLandmarks) {
    let pal = palette(domain, seed);
    let s = size as f64;
    let cx = 0.5 * s + state.sway * s;
    let cy = 0.5 * s;
    let (rx, ry) = (0.36 * s, 0.44 * s);
    let eye_a = EYE_HALF_WIDTH * s;
    let eye_open = EYE_HALF_HEIGHT * s * state.eyes.clamp(0.0, 1.0);
    let eyes: Vec<(f64, f64)> = EYE_CENTERS
        .iter()
        .map(|c| (c[0] * s + state.sway * s, c[1] * s))
        .collect();
    let (mx, my) = (MOUTH_CENTER[0] * s + state.sway * s, MOUTH_CENTER[1] * s);
    let (mrx, mry) = (0.13 * s, (0.012 + 0.07 * state.mouth.clamp(0.0, 1.0)) * s);
    let img = Image::from_fn(size, size, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let face_r = (((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2)).sqrt();
        // Approximate signed distance to the face edge, in pixels.
        let face_d = (face_r - 1.0) * rx.min(ry);
        let coverage = (0.5 - face_d).clamp(0.0, 1.0);
        let shade = 1.0 - pal.shading * ((px - cx) / rx + (py - cy) / ry).max(0.0) * 0.5;
        let skin = pal.skin.map(|v| (v * shade).clamp(0.0, 1.0));
        let mut rgb = mix(pal.background, skin, coverage);
        if let Some(line) = pal.outline {
            if face_d.abs() < 0.025 * s + 0.5 {
                rgb = line;
            }
        }
        for &(ex, ey) in &eyes {
            let u = (px - ex) / eye_a;
            if u.abs() <= 1.0 && (py - ey).abs() <= eye_open * (1.0 - u * u).sqrt() + 0.5 {
                rgb = pal.eye;
                if domain == ToyDomain::Anime && eye_open > 0.3 * EYE_HALF_HEIGHT * s {
                    let hx = ex - 0.3 * eye_a;
                    let hy = ey - 0.3 * eye_open;
                    if (px - hx).powi(2) + (py - hy).powi(2) < (0.2 * eye_open).powi(2) + 0.25 {
                        rgb = [1.0, 1.0, 1.0];
                    }
                }
            }
        }
        let mr = (((px - mx) / mrx).powi(2) + ((py - my) / mry).powi(2)).sqrt();
        let md = (mr - 1.0) * mrx.min(mry);
        let m_cov = (0.5 - md).clamp(0.0, 1.0);
        mix(rgb, pal.mouth, m_cov)
    });
    let landmarks = FaceLandmarks {
        left: eye_points(eyes[0].0, eyes[0].1, eye_a, eye_open),
        right: eye_points(eyes[1].0, eyes[1].1, eye_a, eye_open),
    };
    (img, landmarks)
}

/// Smooth syllable-rate loudness envelope, one value in [0, 1] per frame.
pub fn speech_envelope(seed: u64, frames: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA0D10);
    let period = rng.random_range(5.0..9.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let pause_at = rng.random_range(0..frames.max(1));
    (0..frames)
        .map(|i| {
            let v = 0.5 + 0.5 * (2.0 * PI * i as f64 / period + phase).sin();
            // One short pause per clip.
            let gap = (i as f64 - pause_at as f64).abs();
            if gap < 3.0 {
                v * gap / 3.0
            } else {
                v
            }
        })
        .collect()
}

/// Voiced harmonic signal whose loudness follows `envelope` (one value per
/// video frame at `fps`) and whose first formant rises with it.
pub fn speech_audio(seed: u64, envelope: &[f64], fps: f64, sample_rate: u32) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA0D10);
    let f0 = 100.0 + 60.0 * rng.random_range(0.0..1.0);
    let noise = Normal::new(0.0, 0.004).expect("valid normal");
    let n = ((envelope.len() as f64 / fps) * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut phase_f = 0.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let pos = (t * fps - 0.5).max(0.0);
            let k = (pos.floor() as usize).min(envelope.len() - 1);
            let k1 = (k + 1).min(envelope.len() - 1);
            let e = envelope[k] + (envelope[k1] - envelope[k]) * (pos - pos.floor()).min(1.0);
            let mut v = 0.0;
            for h in 1..=4 {
                v += (2.0 * PI * f0 * h as f64 * t).sin() / h as f64;
            }
            phase_f += 2.0 * PI * (500.0 + 600.0 * e) / sr;
            v += 0.6 * phase_f.sin();
            0.25 * e * v + noise.sample(&mut rng)
        })
        .collect();
    AudioClip::new(samples, sample_rate)
}

fn blink_openness(i: usize, offset: usize) -> f64 {
    match (i + offset) % 40 {
        0 | 4 => 0.5,
        1 | 3 => 0.15,
        2 => 0.0,
        _ => 1.0,
    }
}

/// A clip of `frames` frames at 25 fps and `size x size` pixels.
pub fn toy_clip(domain: ToyDomain, seed: u64, frames: usize, size: usize) -> Result<ToyClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blink_offset = rng.random_range(0..40);
    let sway_phase = rng.random_range(0.0..2.0 * PI);
    let envelope = speech_envelope(seed, frames);
    let states: Vec<FaceState> = (0..frames)
        .map(|i| FaceState {
            mouth: envelope[i],
            eyes: blink_openness(i, blink_offset),
            sway: 0.02 * (2.0 * PI * i as f64 / 37.0 + sway_phase).sin(),
        })
        .collect();
    let mut images = Vec::with_capacity(frames);
    let mut landmarks = Vec::with_capacity(frames);
    for s in &states {
        let (img, lm) = render_face(domain, seed, size, *s);
        images.push(img);
        landmarks.push(lm);
    }
    let poses = states
        .iter()
        .map(|s| Pose::new(s.sway * 300.0, 0.0, 0.0))
        .collect();
    let audio = match domain {
        ToyDomain::Human => Some(speech_audio(
            seed,
            &envelope,
            CANONICAL_FPS,
            CANONICAL_SAMPLE_RATE,
        )?),
        ToyDomain::Anime => None,
    };
    Ok(ToyClip {
        clip: TalkingClip::new(images, CANONICAL_FPS, audio)?,
        landmarks,
        poses,
        states,
    })
}

/// Save a toy clip in the media layout plus landmark and pose sidecars.
pub fn write_toy_clip(toy: &ToyClip, dir: &Path, transcript: Option<&str>) -> Result<()> {
    let mut extra = BTreeMap::new();
    if let Some(t) = transcript {
        extra.insert("transcript".to_string(), t.to_string());
    }
    save_clip(&toy.clip, dir, &extra)?;
    SidecarLandmarkProvider::save(&toy.landmarks, &dir.join(LANDMARK_FILE))?;
    let poses: String = toy
        .poses
        .iter()
        .map(|p| format!("{:.6} {:.6} {:.6}\n", p.yaw, p.pitch, p.roll))
        .collect();
    let path = dir.join(POSE_FILE);
    std::fs::write(&path, poses).map_err(|e| crate::Error::io(&path, e))
}

/// `clips` clips named `clip_000, clip_001, ...` under `dir`.
pub fn write_toy_dataset(
    dir: &Path,
    domain: ToyDomain,
    clips: usize,
    frames: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    (0..clips)
        .map(|i| {
            let sub = dir.join(format!("clip_{i:03}"));
            let toy = toy_clip(domain, seed.wrapping_add(i as u64 * 1009), frames, size)?;
            write_toy_clip(&toy, &sub, Some("bin blue at f two now"))?;
            Ok(sub)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{EyeRegionLandmarkProvider, LandmarkProvider};

    #[test]
    fn landmarks_match_rendered_eyes() {
        let provider = EyeRegionLandmarkProvider::default();
        for eyes in [1.0, 0.5, 0.0] {
            let state = FaceState {
                mouth: 0.3,
                eyes,
                sway: 0.0,
            };
            let (img, truth) = render_face(ToyDomain::Human, 4, 96, state);
            let found = provider.landmarks(&img, 0).unwrap();
            let (a, b) = (truth.ear().unwrap(), found.ear().unwrap());
            assert!(
                (a - b).abs() < 0.12,
                "eyes {eyes}: true EAR {a}, detected {b}"
            );
        }
    }

    #[test]
    fn clips_are_deterministic_and_aligned() {
        let a = toy_clip(ToyDomain::Human, 3, 30, 32).unwrap();
        let b = toy_clip(ToyDomain::Human, 3, 30, 32).unwrap();
        assert_eq!(a.clip.frames(), b.clip.frames());
        assert_eq!(a.clip.audio(), b.clip.audio());
        let audio = a.clip.audio().unwrap();
        assert_eq!(audio.samples().len(), 30 * 640);
        assert!(toy_clip(ToyDomain::Anime, 3, 5, 32)
            .unwrap()
            .clip
            .audio()
            .is_none());
    }

    #[test]
    fn louder_frames_open_the_mouth() {
        let closed = FaceState {
            mouth: 0.0,
            eyes: 1.0,
            sway: 0.0,
        };
        let open = FaceState {
            mouth: 1.0,
            ..closed
        };
        let dark = |img: &Image| img.luma().iter().filter(|&&v| v < 0.3).count();
        let (c, _) = render_face(ToyDomain::Human, 1, 64, closed);
        let (o, _) = render_face(ToyDomain::Human, 1, 64, open);
        assert!(dark(&o) > dark(&c));
    }
}
