//! Ordered, unpaired clip streams for the two translation domains.

use std::fs;
use std::path::Path;

use super::video::{load_video, TalkingClip};
use crate::error::{bail_validation, Error, Result};

#[derive(Clone, Debug)]
pub struct StreamClip {
    pub name: String,
    pub clip: TalkingClip,
}

/// Clips of one domain in directory-name order.
#[derive(Clone, Debug)]
pub struct ClipStream {
    pub clips: Vec<StreamClip>,
}

impl ClipStream {
    pub fn new(clips: Vec<StreamClip>) -> Result<Self> {
        if clips.is_empty() {
            bail_validation!("stream has no clips");
        }
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Whether clip `i` has the `history + 1` frames a temporal term needs.
    pub fn usable_for_temporal(&self, i: usize, history: usize) -> bool {
        self.clips[i].clip.len() > history
    }

    /// `(clip, first frame)` of every window of `history + 1` consecutive frames.
    pub fn temporal_windows(&self, history: usize) -> Vec<(usize, usize)> {
        self.clips
            .iter()
            .enumerate()
            .flat_map(|(c, sc)| (0..(sc.clip.len()).saturating_sub(history)).map(move |s| (c, s)))
            .collect()
    }
}

fn load_domain(dir: &Path) -> Result<ClipStream> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "domain directory not found"),
        ));
    }
    let mut subdirs: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        bail_validation!("{}: domain has no clips", dir.display());
    }
    let clips = subdirs
        .iter()
        .map(|p| {
            Ok(StreamClip {
                name: p
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                clip: load_video(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ClipStream::new(clips)
}

/// Load every clip directory under `dir_a` and `dir_b` as two independent
/// streams.
pub fn make_unpaired_streams(dir_a: &Path, dir_b: &Path) -> Result<(ClipStream, ClipStream)> {
    Ok((load_domain(dir_a)?, load_domain(dir_b)?))
}
