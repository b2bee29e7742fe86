//! Raw clip directories to the training layout: canonical frames, WAV and
//! manifest, eye-landmark and pose sidecars, and the selected identity frame.

use std::fs;
use std::path::Path;

use log::{info, warn};

use super::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::landmarks::{SidecarLandmarkProvider, LANDMARK_FILE};
use crate::media::{
    load_video, read_manifest, save_clip, select_aligned_identity_frame, PoseProvider,
    SidecarPoseProvider, SymmetryPoseProvider, POSE_FILE,
};

pub const IDENTITY_FILE: &str = "identity.png";
pub const DATASET_FILE: &str = "dataset.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepareSummary {
    /// `(clip name, frame count)`.
    pub prepared: Vec<(String, usize)>,
    /// `(clip name, reason)`.
    pub skipped: Vec<(String, String)>,
}

fn prepare_clip(src: &Path, dst: &Path, cfg: &PipelineConfig) -> Result<usize> {
    let clip = load_video(src)?;
    let mut extra = read_manifest(src)?.map(|m| m.extra).unwrap_or_default();
    let pose_src = src.join(POSE_FILE);
    let pose: Box<dyn PoseProvider> = if pose_src.exists() {
        Box::new(SidecarPoseProvider::load(&pose_src)?)
    } else if cfg.providers.pose == "sidecar" {
        return Err(Error::Provider(format!(
            "{}: no {POSE_FILE} for the sidecar pose provider",
            src.display()
        )));
    } else {
        Box::new(SymmetryPoseProvider)
    };
    let (index, identity) = select_aligned_identity_frame(&clip, pose.as_ref())?;
    extra.insert("identity_index".into(), index.to_string());

    let lm_src = src.join(LANDMARK_FILE);
    let landmarks = if lm_src.exists() {
        Some(SidecarLandmarkProvider::load(&lm_src)?.frames().to_vec())
    } else if let Some(p) = cfg.landmark_provider() {
        Some(
            clip.frames()
                .iter()
                .enumerate()
                .map(|(i, f)| p.landmarks(f, i))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    save_clip(&clip, dst, &extra)?;
    identity.save_png(&dst.join(IDENTITY_FILE))?;
    if let Some(l) = landmarks {
        SidecarLandmarkProvider::save(&l, &dst.join(LANDMARK_FILE))?;
    }
    if pose_src.exists() {
        let to = dst.join(POSE_FILE);
        fs::copy(&pose_src, &to).map_err(|e| Error::io(&to, e))?;
    }
    Ok(clip.len())
}

/// Prepare every clip subdirectory of `raw_dir` into `out_dir`. Failing clips
/// are logged and skipped; the call fails only when nothing was prepared.
pub fn prepare_dataset(
    raw_dir: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<PrepareSummary> {
    let mut subdirs: Vec<_> = fs::read_dir(raw_dir)
        .map_err(|e| Error::io(raw_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut summary = PrepareSummary::default();
    for sub in subdirs {
        let name = sub
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let dst = out_dir.join(&name);
        match prepare_clip(&sub, &dst, cfg) {
            Ok(n) => {
                info!("prepared {name}: {n} frames");
                summary.prepared.push((name, n));
            }
            Err(e) => {
                warn!("skipping {name}: {e}");
                let _ = fs::remove_dir_all(&dst);
                summary.skipped.push((name, e.to_string()));
            }
        }
    }
    if summary.prepared.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no clip could be prepared ({} skipped)",
            raw_dir.display(),
            summary.skipped.len()
        )));
    }
    let listing: String = summary
        .prepared
        .iter()
        .map(|(n, f)| format!("{n} {f}\n"))
        .collect();
    let path = out_dir.join(DATASET_FILE);
    fs::write(&path, listing).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{toy_clip, write_toy_clip, ToyDomain};

    #[test]
    fn good_clips_are_prepared_and_bad_ones_skipped() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let toy = toy_clip(ToyDomain::Human, 1, 6, 32).unwrap();
        write_toy_clip(&toy, &raw.path().join("a"), Some("bin blue")).unwrap();
        fs::create_dir_all(raw.path().join("b")).unwrap();
        fs::write(raw.path().join("b/frame_000001.png"), b"not a png").unwrap();
        let s = prepare_dataset(raw.path(), out.path(), &PipelineConfig::toy(32)).unwrap();
        assert_eq!(s.prepared, vec![("a".to_string(), 6)]);
        assert_eq!(s.skipped.len(), 1);
        let m = read_manifest(&out.path().join("a")).unwrap().unwrap();
        assert_eq!(m.extra["transcript"], "bin blue");
        assert!(m.extra.contains_key("identity_index"));
        assert!(out.path().join("a").join(IDENTITY_FILE).exists());
        assert!(!out.path().join("b").exists());
    }

    #[test]
    fn landmarks_are_computed_when_missing() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let toy = toy_clip(ToyDomain::Human, 2, 4, 32).unwrap();
        save_clip(&toy.clip, &raw.path().join("c"), &Default::default()).unwrap();
        prepare_dataset(raw.path(), out.path(), &PipelineConfig::toy(32)).unwrap();
        let lm = SidecarLandmarkProvider::load(&out.path().join("c").join(LANDMARK_FILE)).unwrap();
        assert_eq!(lm.frames().len(), 4);
    }

    #[test]
    fn empty_input_fails() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(prepare_dataset(raw.path(), out.path(), &PipelineConfig::default()).is_err());
    }
}
