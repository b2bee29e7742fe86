//! Head-pose estimation interface and frontal identity-frame selection.

use std::fs;
use std::path::Path;

use super::image::Image;
use super::video::TalkingClip;
use crate::error::{bail_validation, Error, Result};

pub const POSE_FILE: &str = "pose.txt";

/// Head orientation in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    /// `|yaw| + |pitch| + |roll|`.
    pub fn deviation(&self) -> f64 {
        self.yaw.abs() + self.pitch.abs() + self.roll.abs()
    }
}

pub trait PoseProvider {
    fn name(&self) -> &str;
    /// Pose of frame `index` of a clip.
    fn pose(&self, frame: &Image, index: usize) -> Result<Pose>;
}

/// Index and copy of the most frontal frame. Frames the provider fails on are
/// skipped; ties go to the earliest frame.
pub fn select_aligned_identity_frame(
    clip: &TalkingClip,
    provider: &dyn PoseProvider,
) -> Result<(usize, Image)> {
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (i, f) in clip.frames().iter().enumerate() {
        match provider.pose(f, i) {
            Ok(p) if p.deviation().is_finite() => {
                if best.is_none_or(|(_, d)| p.deviation() < d) {
                    best = Some((i, p.deviation()));
                }
            }
            Ok(p) => last_err = Some(format!("frame {i}: non-finite pose {p:?}")),
            Err(e) => last_err = Some(format!("frame {i}: {e}")),
        }
    }
    match best {
        Some((i, _)) => Ok((i, clip.frames()[i].clone())),
        None => Err(Error::Provider(format!(
            "pose provider `{}` failed on every frame ({})",
            provider.name(),
            last_err.unwrap_or_default()
        ))),
    }
}

/// Per-frame poses read from a `yaw pitch roll` text file, one line per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SidecarPoseProvider {
    poses: Vec<Pose>,
}

impl SidecarPoseProvider {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self { poses }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut poses = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::Validation(format!("{}:{}: bad number", path.display(), n + 1))
                })?;
            if v.len() != 3 {
                bail_validation!("{}:{}: expected yaw pitch roll", path.display(), n + 1);
            }
            poses.push(Pose::new(v[0], v[1], v[2]));
        }
        Ok(Self { poses })
    }
}

impl PoseProvider for SidecarPoseProvider {
    fn name(&self) -> &str {
        "sidecar"
    }

    fn pose(&self, _frame: &Image, index: usize) -> Result<Pose> {
        self.poses
            .get(index)
            .copied()
            .ok_or_else(|| Error::Provider(format!("no pose recorded for frame {index}")))
    }
}

/// Image-only fallback: yaw from left/right luma asymmetry, roll from the
/// tilt of the dark-pixel mass, pitch from its vertical offset. Coarse, but
/// zero for a mirror-symmetric, centered face.
#[derive(Clone, Copy, Debug, Default)]
pub struct SymmetryPoseProvider;

impl PoseProvider for SymmetryPoseProvider {
    fn name(&self) -> &str {
        "symmetry"
    }

    fn pose(&self, frame: &Image, _index: usize) -> Result<Pose> {
        let (h, w) = frame.dims();
        let luma = frame.luma();
        let mean = luma.iter().sum::<f64>() / luma.len() as f64;
        let mut asym = 0.0;
        for y in 0..h {
            for x in 0..w / 2 {
                asym += luma[y * w + x] - luma[y * w + (w - 1 - x)];
            }
        }
        let yaw = 90.0 * asym / (h * (w / 2).max(1)) as f64;
        // Dark-mass centroid and principal axis.
        let (mut m, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let d = (mean - luma[y * w + x]).max(0.0);
                m += d;
                cx += d * x as f64;
                cy += d * y as f64;
            }
        }
        if m <= 0.0 {
            return Err(Error::Provider("featureless frame".into()));
        }
        cx /= m;
        cy /= m;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let d = (mean - luma[y * w + x]).max(0.0);
                sxx += d * (x as f64 - cx).powi(2);
                sxy += d * (x as f64 - cx) * (y as f64 - cy);
            }
        }
        let roll = if sxx > 0.0 {
            (sxy / sxx).atan().to_degrees()
        } else {
            0.0
        };
        let pitch = 90.0 * (cy / h as f64 - 0.5);
        Ok(Pose::new(yaw, pitch, roll))
    }
}
