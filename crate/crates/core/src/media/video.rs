//! Clips stored as directories of numbered PNG frames with a sidecar WAV and
//! a `key=value` manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::audio::{load_audio, AudioClip, CANONICAL_SAMPLE_RATE};
use super::image::Image;
use crate::error::{bail_validation, Error, Result};

pub const CANONICAL_FPS: f64 = 25.0;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const AUDIO_FILE: &str = "audio.wav";

#[derive(Clone, Debug, PartialEq)]
pub struct TalkingClip {
    frames: Vec<Image>,
    fps: f64,
    audio: Option<AudioClip>,
}

impl TalkingClip {
    pub fn new(frames: Vec<Image>, fps: f64, audio: Option<AudioClip>) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            bail_validation!("fps must be positive, got {fps}");
        }
        let Some(first) = frames.first() else {
            bail_validation!("clip has no frames");
        };
        let dims = first.dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            bail_validation!("frame {i} is {:?} but frame 0 is {:?}", f.dims(), dims);
        }
        if frames
            .iter()
            .flat_map(|f| f.data())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            bail_validation!("pixel values must lie in [0, 1]");
        }
        Ok(Self { frames, fps, audio })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn audio(&self) -> Option<&AudioClip> {
        self.audio.as_ref()
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn with_audio(mut self, audio: Option<AudioClip>) -> Self {
        self.audio = audio;
        self
    }
}

/// Contents of `manifest.txt`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipManifest {
    pub fps: f64,
    pub frame_count: usize,
    pub audio_path: Option<String>,
    /// Any further keys, preserved verbatim (e.g. `transcript`).
    pub extra: BTreeMap<String, String>,
}

impl ClipManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = ClipManifest::default();
        let mut fps = None;
        let mut count = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail_validation!("manifest line {}: expected key=value", n + 1);
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "fps" => {
                    fps = Some(v.parse::<f64>().map_err(|_| {
                        Error::Validation(format!("manifest line {}: bad fps `{v}`", n + 1))
                    })?)
                }
                "frame_count" => {
                    count = Some(v.parse::<usize>().map_err(|_| {
                        Error::Validation(format!("manifest line {}: bad frame_count `{v}`", n + 1))
                    })?)
                }
                "audio_path" => m.audio_path = (!v.is_empty()).then(|| v.to_string()),
                _ => {
                    m.extra.insert(k.to_string(), v.to_string());
                }
            }
        }
        m.fps = fps.ok_or_else(|| Error::Validation("manifest is missing fps".into()))?;
        m.frame_count =
            count.ok_or_else(|| Error::Validation("manifest is missing frame_count".into()))?;
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut s = format!("fps={}\nframe_count={}\n", self.fps, self.frame_count);
        if let Some(a) = &self.audio_path {
            s.push_str(&format!("audio_path={a}\n"));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{:06}.png", index + 1)
}

/// Sorted `frame_*.png` files of a directory.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_manifest(dir: &Path) -> Result<Option<ClipManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    ClipManifest::parse(&text).map(Some)
}

/// Load a clip directory (or the directory of a given manifest file).
/// Without a manifest the frames are taken at 25 fps and no audio is loaded.
pub fn load_video(path: &Path) -> Result<TalkingClip> {
    let dir = if path.is_file() {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        path.to_path_buf()
    };
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "clip directory not found"),
        ));
    }
    let manifest = read_manifest(&dir)?;
    let files = list_frame_files(&dir)?;
    if files.is_empty() {
        bail_validation!("{}: no frame_*.png files", dir.display());
    }
    if let Some(m) = &manifest {
        if m.frame_count != files.len() {
            bail_validation!(
                "{}: manifest lists {} frames but {} were found",
                dir.display(),
                m.frame_count,
                files.len()
            );
        }
    }
    let frames = files
        .iter()
        .map(|f| Image::load_png(f))
        .collect::<Result<Vec<_>>>()?;
    let fps = manifest.as_ref().map_or(CANONICAL_FPS, |m| m.fps);
    let audio = match manifest.as_ref().and_then(|m| m.audio_path.as_ref()) {
        Some(rel) => Some(load_audio(&dir.join(rel), CANONICAL_SAMPLE_RATE)?),
        None => None,
    };
    TalkingClip::new(frames, fps, audio).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", dir.display())),
        other => other,
    })
}

/// Write frames, audio and manifest into `dir` (created if needed).
pub fn save_clip(clip: &TalkingClip, dir: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in clip.frames().iter().enumerate() {
        f.save_png(&dir.join(frame_file_name(i)))?;
    }
    let audio_path = match clip.audio() {
        Some(a) => {
            a.save_wav(&dir.join(AUDIO_FILE))?;
            Some(AUDIO_FILE.to_string())
        }
        None => None,
    };
    let manifest = ClipManifest {
        fps: clip.fps(),
        frame_count: clip.len(),
        audio_path,
        extra: extra.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))
}
