//! Stage-1 training data: clips resized to the generator resolution with
//! per-frame MFCC windows, cut into contiguous frame windows.

use std::fs;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{bail_validation, Error, Result};
use crate::landmarks::{FaceLandmarks, SidecarLandmarkProvider, LANDMARK_FILE};
use crate::media::{
    frame_audio_windows, images_to_tensor, load_video, select_aligned_identity_frame, Image,
    MfccWindow, PoseProvider, SidecarPoseProvider, SymmetryPoseProvider, TalkingClip,
    CANONICAL_WINDOW_MS, POSE_FILE,
};

use super::encoder::mfcc_batch;

/// One clip prepared for training.
#[derive(Clone, Debug)]
pub struct Stage1Clip {
    pub name: String,
    /// `[F, 3, R, R]` in [-1, 1].
    pub frames: Tensor,
    /// `[1, 3, R, R]`, the most frontal frame.
    pub identity: Tensor,
    pub identity_index: usize,
    /// One 200 ms window per frame.
    pub mfcc: Vec<MfccWindow>,
    /// Eye landmarks on the `R x R` grid, one set per frame.
    pub landmarks: Option<Vec<FaceLandmarks>>,
}

impl Stage1Clip {
    /// `landmarks` are in the clip's original pixel coordinates.
    pub fn from_clip(
        name: &str,
        clip: &TalkingClip,
        landmarks: Option<Vec<FaceLandmarks>>,
        pose: &dyn PoseProvider,
        resolution: usize,
    ) -> Result<Self> {
        let audio = clip
            .audio()
            .ok_or_else(|| Error::Validation(format!("clip {name} has no audio track")))?;
        let windows = frame_audio_windows(audio, clip.fps(), CANONICAL_WINDOW_MS)?.windows;
        let n = windows.len().min(clip.len());
        if n == 0 {
            bail_validation!("clip {name} has no usable frames");
        }
        if let Some(l) = &landmarks {
            if l.len() < n {
                bail_validation!("clip {name}: {} landmark sets for {n} frames", l.len());
            }
        }
        let (h, w) = clip.frame_dims();
        let resized: Vec<Image> = clip.frames()[..n]
            .iter()
            .map(|f| f.resized(resolution, resolution))
            .collect::<Result<_>>()?;
        let (identity_index, identity) = select_aligned_identity_frame(clip, pose)?;
        let landmarks = landmarks.map(|l| {
            l[..n]
                .iter()
                .map(|f| f.rescaled((h, w), (resolution, resolution)))
                .collect()
        });
        Ok(Self {
            name: name.to_string(),
            frames: images_to_tensor(&resized)?,
            identity: identity.resized(resolution, resolution)?.to_tensor(),
            identity_index,
            mfcc: windows.into_iter().take(n).collect(),
            landmarks,
        })
    }

    pub fn len(&self) -> usize {
        self.mfcc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mfcc.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.frames.shape()[2]
    }

    /// Frames `start .. start + len` as one batch.
    pub fn window(&self, start: usize, len: usize) -> Result<Stage1Batch> {
        if len == 0 || start + len > self.len() {
            bail_validation!(
                "window {start}+{len} exceeds clip {} of {} frames",
                self.name,
                self.len()
            );
        }
        let refs: Vec<&MfccWindow> = self.mfcc[start..start + len].iter().collect();
        Ok(Stage1Batch {
            identity: self.identity.clone(),
            frames: self.frames.narrow(0, start, len)?,
            mfcc: mfcc_batch(&refs)?,
            sync_audio: mfcc_batch(&[&self.mfcc[start + len / 2]])?,
            landmarks: self
                .landmarks
                .as_ref()
                .map(|l| l[start..start + len].to_vec()),
        })
    }
}

/// Inputs of one training step: a contiguous window of frames from one clip.
#[derive(Clone, Debug)]
pub struct Stage1Batch {
    /// `[1, 3, R, R]`.
    pub identity: Tensor,
    /// `[K, 3, R, R]` consecutive target frames.
    pub frames: Tensor,
    /// `[K, 13, 1, T]`, the window of each target frame.
    pub mfcc: Tensor,
    /// `[1, 13, 1, T]`, the 200 ms window centered on the middle frame.
    pub sync_audio: Tensor,
    pub landmarks: Option<Vec<FaceLandmarks>>,
}

impl Stage1Batch {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn without_landmarks(mut self) -> Self {
        self.landmarks = None;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Stage1Dataset {
    pub clips: Vec<Stage1Clip>,
}

impl Stage1Dataset {
    pub fn new(clips: Vec<Stage1Clip>) -> Result<Self> {
        if clips.is_empty() {
            bail_validation!("stage-1 dataset has no clips");
        }
        let r = clips[0].resolution();
        if clips.iter().any(|c| c.resolution() != r) {
            bail_validation!("stage-1 clips have mixed resolutions");
        }
        Ok(Self { clips })
    }

    /// Every subdirectory of `dir` (sorted) is one clip in the media layout,
    /// with optional `landmarks.txt` and `pose.txt` sidecars.
    pub fn load(dir: &Path, resolution: usize) -> Result<Self> {
        let mut subdirs: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        let mut clips = Vec::new();
        for sub in subdirs {
            let name = sub
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let clip = load_video(&sub)?;
            let lm_path = sub.join(LANDMARK_FILE);
            let landmarks = if lm_path.exists() {
                Some(SidecarLandmarkProvider::load(&lm_path)?.frames().to_vec())
            } else {
                None
            };
            let pose_path = sub.join(POSE_FILE);
            let pose: Box<dyn PoseProvider> = if pose_path.exists() {
                Box::new(SidecarPoseProvider::load(&pose_path)?)
            } else {
                Box::new(SymmetryPoseProvider)
            };
            clips.push(Stage1Clip::from_clip(
                &name,
                &clip,
                landmarks,
                pose.as_ref(),
                resolution,
            )?);
        }
        Self::new(clips)
    }

    /// `(clip, start)` of every full window of `len` frames.
    pub fn windows(&self, len: usize) -> Vec<(usize, usize)> {
        self.clips
            .iter()
            .enumerate()
            .flat_map(|(c, clip)| (0..(clip.len() + 1).saturating_sub(len)).map(move |s| (c, s)))
            .collect()
    }

    pub fn has_landmarks(&self) -> bool {
        self.clips.iter().all(|c| c.landmarks.is_some())
    }
}
