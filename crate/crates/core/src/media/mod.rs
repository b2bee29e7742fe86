//! Audio and video ingestion: WAV/PNG I/O, per-frame MFCC windows, face crops,
//! identity-frame selection and unpaired clip streams.

pub mod audio;
pub mod framing;
pub mod image;
pub mod mfcc;
pub mod pose;
pub mod streams;
pub mod video;
pub mod wav;

pub use audio::{load_audio, resample, AudioClip, CANONICAL_SAMPLE_RATE};
pub use framing::{
    frame_audio_windows, AudioFraming, AudioWindowSequence, MfccWindow, CANONICAL_WINDOW_MS,
};
pub use image::{crop_lower_half, crop_upper_half, images_to_tensor, FaceRegion, Image};
pub use mfcc::{compute_mfcc, MfccExtractor, N_MFCC};
pub use pose::{
    select_aligned_identity_frame, Pose, PoseProvider, SidecarPoseProvider, SymmetryPoseProvider,
    POSE_FILE,
};
pub use streams::{make_unpaired_streams, ClipStream, StreamClip};
pub use video::{
    frame_file_name, list_frame_files, load_video, read_manifest, save_clip, ClipManifest,
    TalkingClip, AUDIO_FILE, CANONICAL_FPS, MANIFEST_FILE,
};
