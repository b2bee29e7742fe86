//! One image and one audio track to a talking human clip, then to the
//! animation domain.

use std::path::{Path, PathBuf};

use log::info;

use super::config::PipelineConfig;
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::media::{
    frame_audio_windows, images_to_tensor, load_audio, save_clip, AudioClip, Image, MfccWindow,
    TalkingClip, CANONICAL_FPS, CANONICAL_SAMPLE_RATE, CANONICAL_WINDOW_MS,
};
use crate::stage1::adapt::{one_shot_adapt, AdaptReport};
use crate::stage1::encoder::mfcc_batch;
use crate::stage1::trainer::{latest_checkpoint, load_generator, CHECKPOINT_DIR, NETWORK_FILES};
use crate::stage1::SpadeGenerator;
use crate::stage2::trainer::{load_translator, NETWORK_FILES as STAGE2_FILES};

pub const HUMAN_DIR: &str = "human";
pub const ANIMATED_DIR: &str = "animated";
/// Frames generated or translated per forward pass.
pub const GENERATION_BATCH: usize = 8;

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub stage1_checkpoint: PathBuf,
    /// Not needed with `human_only`.
    pub stage2_checkpoint: Option<PathBuf>,
    pub skip_adapt: bool,
    pub human_only: bool,
    /// Also write the human-domain clip when translating.
    pub keep_intermediate: bool,
}

#[derive(Clone, Debug)]
pub struct GenerateOutput {
    pub human: TalkingClip,
    pub animated: Option<TalkingClip>,
    pub adapt: Option<AdaptReport>,
}

/// A checkpoint directory holding `file`, or the latest epoch of a training
/// output directory.
pub fn resolve_checkpoint(dir: &Path, file: &str) -> Result<PathBuf> {
    if dir.join(format!("{file}.bin")).is_file() {
        return Ok(dir.to_path_buf());
    }
    match latest_checkpoint(&dir.join(CHECKPOINT_DIR))? {
        Some((_, p)) => Ok(p),
        None => Err(Error::Checkpoint(format!(
            "{}: no {file} checkpoint found",
            dir.display()
        ))),
    }
}

fn run_batches(n: usize, mut f: impl FnMut(usize, usize) -> Result<Tensor>) -> Result<Vec<Tensor>> {
    (0..n)
        .step_by(GENERATION_BATCH)
        .map(|start| f(start, GENERATION_BATCH.min(n - start)))
        .collect()
}

fn to_images(batches: &[Tensor]) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    for t in batches {
        for i in 0..t.shape()[0] {
            out.push(Image::from_tensor(t, i)?);
        }
    }
    Ok(out)
}

/// Human-domain frames, one per audio window, from `identity` (`[1, 3, R, R]`).
pub fn generate_human_frames(
    generator: &SpadeGenerator,
    identity: &Tensor,
    windows: &[MfccWindow],
) -> Result<Vec<Image>> {
    let p = generator.store.bind(false);
    let batches = run_batches(windows.len(), |start, len| {
        let refs: Vec<&MfccWindow> = windows[start..start + len].iter().collect();
        let ids = Tensor::cat(&vec![identity.clone(); len], 0)?;
        generator.forward(&p, &ids, &mfcc_batch(&refs)?)
    })?;
    to_images(&batches)
}

/// Run generation from an in-memory audio clip and identity image.
pub fn generate(
    audio: &AudioClip,
    image: &Image,
    cfg: &PipelineConfig,
    opts: &GenerateOptions,
) -> Result<GenerateOutput> {
    let s1 = resolve_checkpoint(&opts.stage1_checkpoint, NETWORK_FILES[0])?;
    let generator = load_generator(&s1, &cfg.stage1)?;
    let translator = if opts.human_only {
        None
    } else {
        let dir = opts.stage2_checkpoint.as_deref().ok_or_else(|| {
            Error::Checkpoint(
                "no stage-2 checkpoint given (use --human-only to skip translation)".into(),
            )
        })?;
        let dir = resolve_checkpoint(dir, STAGE2_FILES[0])?;
        Some(load_translator(&dir, &cfg.stage2, STAGE2_FILES[0])?)
    };

    let audio = audio.resampled(CANONICAL_SAMPLE_RATE)?;
    let windows = frame_audio_windows(&audio, CANONICAL_FPS, CANONICAL_WINDOW_MS)?.windows;
    let r = cfg.stage1.generator.resolution;
    let identity = image.resized(r, r)?.to_tensor();

    let (generator, adapt) = if opts.skip_adapt || cfg.adapt_epochs == 0 {
        (generator, None)
    } else {
        let refs: Vec<&MfccWindow> = windows.iter().collect();
        let provider = cfg.perceptual_provider()?;
        let (g, report) = one_shot_adapt(
            &generator,
            &identity,
            &mfcc_batch(&refs)?,
            provider.as_ref(),
            cfg.adapt_epochs,
            cfg.adapt_lr,
        )?;
        info!("adapted generator: perceptual loss {:?}", report.losses);
        (g, Some(report))
    };
    let human_frames = generate_human_frames(&generator, &identity, &windows)?;
    let human = TalkingClip::new(human_frames, CANONICAL_FPS, Some(audio.clone()))?;

    let animated = match translator {
        None => None,
        Some(t) => {
            let tr = t.config.resolution;
            let frames: Vec<Image> = human
                .frames()
                .iter()
                .map(|f| f.resized(tr, tr))
                .collect::<Result<_>>()?;
            let batches = run_batches(frames.len(), |start, len| {
                t.translate(&images_to_tensor(&frames[start..start + len])?)
            })?;
            Some(TalkingClip::new(
                to_images(&batches)?,
                CANONICAL_FPS,
                Some(audio),
            )?)
        }
    };
    Ok(GenerateOutput {
        human,
        animated,
        adapt,
    })
}

/// Generate from files and write clip directories under `out_dir`:
/// `animated/`, plus `human/` with `human_only` or `keep_intermediate`.
pub fn generate_to_dir(
    audio_path: &Path,
    image_path: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
    opts: &GenerateOptions,
) -> Result<GenerateOutput> {
    let audio = load_audio(audio_path, CANONICAL_SAMPLE_RATE)?;
    let image = Image::load_png(image_path)?;
    let out = generate(&audio, &image, cfg, opts)?;
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("config_hash".to_string(), cfg.hash());
    if opts.human_only || opts.keep_intermediate {
        save_clip(&out.human, &out_dir.join(HUMAN_DIR), &extra)?;
    }
    if let Some(a) = &out.animated {
        save_clip(a, &out_dir.join(ANIMATED_DIR), &extra)?;
    }
    Ok(out)
}
