//! Stage-2 training data: two unpaired frame streams resized to the
//! translator resolution, cut into windows of `t + 1` consecutive frames.

use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{bail_validation, Result};
use crate::landmarks::{FaceLandmarks, SidecarLandmarkProvider, LANDMARK_FILE};
use crate::media::{images_to_tensor, make_unpaired_streams, ClipStream, Image};

#[derive(Clone, Debug)]
pub struct Stage2Clip {
    pub name: String,
    /// `[F, 3, R, R]` in [-1, 1].
    pub frames: Tensor,
    /// Eye landmarks on the `R x R` grid.
    pub landmarks: Option<Vec<FaceLandmarks>>,
}

impl Stage2Clip {
    pub fn new(
        name: &str,
        frames: &[Image],
        landmarks: Option<Vec<FaceLandmarks>>,
        resolution: usize,
    ) -> Result<Self> {
        if frames.is_empty() {
            bail_validation!("clip {name} has no frames");
        }
        if let Some(l) = &landmarks {
            if l.len() < frames.len() {
                bail_validation!(
                    "clip {name}: {} landmark sets for {} frames",
                    l.len(),
                    frames.len()
                );
            }
        }
        let dims = frames[0].dims();
        let resized: Vec<Image> = frames
            .iter()
            .map(|f| f.resized(resolution, resolution))
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.to_string(),
            frames: images_to_tensor(&resized)?,
            landmarks: landmarks.map(|l| {
                l[..frames.len()]
                    .iter()
                    .map(|f| f.rescaled(dims, (resolution, resolution)))
                    .collect()
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Stage2Window> {
        if len == 0 || start + len > self.len() {
            bail_validation!(
                "window {start}+{len} exceeds clip {} of {} frames",
                self.name,
                self.len()
            );
        }
        Ok(Stage2Window {
            frames: self.frames.narrow(0, start, len)?,
            landmarks: self
                .landmarks
                .as_ref()
                .map(|l| l[start..start + len].to_vec()),
        })
    }
}

/// Consecutive frames `[K, 3, R, R]` of one clip.
#[derive(Clone, Debug)]
pub struct Stage2Window {
    pub frames: Tensor,
    pub landmarks: Option<Vec<FaceLandmarks>>,
}

impl Stage2Window {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Each frame as its own `[1, 3, R, R]` tensor.
    pub fn split(&self) -> Result<Vec<Tensor>> {
        split_frames(&self.frames)
    }
}

pub fn split_frames(frames: &Tensor) -> Result<Vec<Tensor>> {
    (0..frames.shape()[0])
        .map(|i| frames.narrow(0, i, 1))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Stage2Dataset {
    pub source: Vec<Stage2Clip>,
    pub target: Vec<Stage2Clip>,
}

impl Stage2Dataset {
    pub fn new(source: Vec<Stage2Clip>, target: Vec<Stage2Clip>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            bail_validation!("stage-2 dataset needs clips in both domains");
        }
        let r = source[0].resolution();
        if source.iter().chain(&target).any(|c| c.resolution() != r) {
            bail_validation!("stage-2 clips have mixed resolutions");
        }
        Ok(Self { source, target })
    }

    /// Source clips from `dir_a` (with optional `landmarks.txt` sidecars)
    /// and target clips from `dir_b`.
    pub fn load(dir_a: &Path, dir_b: &Path, resolution: usize) -> Result<Self> {
        let (a, b) = make_unpaired_streams(dir_a, dir_b)?;
        Self::new(
            Self::prepare(&a, Some(dir_a), resolution)?,
            Self::prepare(&b, None, resolution)?,
        )
    }

    fn prepare(
        stream: &ClipStream,
        sidecar_root: Option<&Path>,
        resolution: usize,
    ) -> Result<Vec<Stage2Clip>> {
        stream
            .clips
            .iter()
            .map(|sc| {
                let landmarks = match sidecar_root.map(|r| r.join(&sc.name).join(LANDMARK_FILE)) {
                    Some(p) if p.exists() => {
                        Some(SidecarLandmarkProvider::load(&p)?.frames().to_vec())
                    }
                    _ => None,
                };
                Stage2Clip::new(&sc.name, sc.clip.frames(), landmarks, resolution)
            })
            .collect()
    }

    pub fn resolution(&self) -> usize {
        self.source[0].resolution()
    }

    pub fn source_has_landmarks(&self) -> bool {
        self.source.iter().all(|c| c.landmarks.is_some())
    }

    /// `(clip, start)` of every window of `len` frames in `clips`.
    pub fn windows(clips: &[Stage2Clip], len: usize) -> Vec<(usize, usize)> {
        clips
            .iter()
            .enumerate()
            .flat_map(|(c, clip)| (0..(clip.len() + 1).saturating_sub(len)).map(move |s| (c, s)))
            .collect()
    }
}
