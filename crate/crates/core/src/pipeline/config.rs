//! Whole-pipeline configuration: both training stages, provider choices,
//! data and run paths, and the seed, in one `key=value` file.

use std::path::{Path, PathBuf};

use crate::config::{entry, hash_kv, parse_kv, parse_value, render_kv, KeyValues, Settings};
use crate::error::{bail_validation, Error, Result};
use crate::landmarks::{EyeRegionLandmarkProvider, LandmarkProvider};
use crate::metrics::{BlinkDetector, ThresholdBlinkDetector};
use crate::providers::{
    embedding_provider_by_name, feature_provider_by_name, EmbeddingProvider, FeatureProvider,
};
use crate::stage1::adapt::{DEFAULT_ADAPT_EPOCHS, DEFAULT_ADAPT_LR};
use crate::stage1::trainer::Stage1Config;
use crate::stage2::Stage2Config;

/// Registry names; `none` disables an optional provider.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderNames {
    /// `eye-region` or `sidecar` (per-clip landmark files only).
    pub landmark: String,
    /// `symmetry` or `sidecar`.
    pub pose: String,
    /// `thumbnail`, `frozen-conv` or `none`.
    pub embedding: String,
    /// `echo` (reads the clip transcript) or `none`.
    pub lip_reader: String,
    /// `threshold` or `none`.
    pub blink: String,
}

impl Default for ProviderNames {
    fn default() -> Self {
        Self {
            landmark: "eye-region".into(),
            pose: "symmetry".into(),
            embedding: "thumbnail".into(),
            lip_reader: "echo".into(),
            blink: "threshold".into(),
        }
    }
}

pub const TOY_RESOLUTION: usize = 32;

const LANDMARKS: [&str; 2] = ["eye-region", "sidecar"];
const POSES: [&str; 2] = ["symmetry", "sidecar"];
const LIP_READERS: [&str; 2] = ["echo", "none"];
const BLINKS: [&str; 2] = ["threshold", "none"];

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub providers: ProviderNames,
    /// Prepared human-domain clips.
    pub human_dir: PathBuf,
    /// Prepared animation-domain clips.
    pub anime_dir: PathBuf,
    /// Training output root; stages write to `stage1/` and `stage2/` below it.
    pub runs_dir: PathBuf,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub adapt_epochs: usize,
    pub adapt_lr: f64,
    /// Drives both stages' seeds.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            providers: ProviderNames::default(),
            human_dir: "data/human".into(),
            anime_dir: "data/anime".into(),
            runs_dir: "runs".into(),
            stage1_epochs: 2,
            stage2_epochs: 2,
            adapt_epochs: DEFAULT_ADAPT_EPOCHS,
            adapt_lr: DEFAULT_ADAPT_LR,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Small networks at `resolution` for both stages.
    pub fn toy(resolution: usize) -> Self {
        Self {
            stage1: Stage1Config::toy(resolution),
            stage2: Stage2Config::toy(resolution),
            ..Self::default()
        }
    }

    /// `preset = toy` starts from [`PipelineConfig::toy`] at 32 px instead of
    /// the full-size defaults; every other key overrides the preset.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = parse_kv(text)?;
        let mut cfg = match kv.remove("preset").as_deref() {
            None | Some("default") => Self::default(),
            Some("toy") => Self::toy(TOY_RESOLUTION),
            Some(other) => return Err(Error::Config(format!("preset: unknown preset `{other}`"))),
        };
        cfg.apply(&kv)?;
        Ok(cfg)
    }

    /// Parse a file; relative paths in it are taken relative to the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.human_dir, &mut cfg.anime_dir, &mut cfg.runs_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        render_kv(&self.to_kv())
    }

    pub fn hash(&self) -> String {
        hash_kv(&self.to_kv())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.stage1.seed = seed;
        self.stage2.seed = seed;
    }

    pub fn stage1_dir(&self) -> PathBuf {
        self.runs_dir.join("stage1")
    }

    pub fn stage2_dir(&self) -> PathBuf {
        self.runs_dir.join("stage2")
    }

    /// The Stage-1 training perceptual features, reused for adaptation.
    pub fn perceptual_provider(&self) -> Result<Box<dyn FeatureProvider>> {
        feature_provider_by_name(&self.stage1.perceptual, self.stage1.seed.wrapping_add(5))
    }

    pub fn embedding_provider(&self) -> Result<Option<Box<dyn EmbeddingProvider>>> {
        match self.providers.embedding.as_str() {
            "none" => Ok(None),
            name => embedding_provider_by_name(name, self.seed.wrapping_add(7)).map(Some),
        }
    }

    /// Landmarks computed from pixels; `None` when only sidecar files are
    /// to be used.
    pub fn landmark_provider(&self) -> Option<Box<dyn LandmarkProvider>> {
        match self.providers.landmark.as_str() {
            "eye-region" => Some(Box::new(EyeRegionLandmarkProvider::default())),
            _ => None,
        }
    }

    pub fn blink_detector(&self) -> Option<Box<dyn BlinkDetector>> {
        match self.providers.blink.as_str() {
            "threshold" => Some(Box::new(ThresholdBlinkDetector::default())),
            _ => None,
        }
    }
}

fn one_of(key: &str, v: &str, allowed: &[&str]) -> Result<String> {
    if allowed.contains(&v) {
        Ok(v.to_string())
    } else {
        Err(Error::Config(format!(
            "{key}: `{v}` is not one of {allowed:?}"
        )))
    }
}

impl Settings for PipelineConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        if let Some(k) = key.strip_prefix("stage1.") {
            if k == "seed" {
                return Err(Error::Config(
                    "stage1.seed: use the top-level `seed`".into(),
                ));
            }
            return self.stage1.set(k, v);
        }
        if let Some(k) = key.strip_prefix("stage2.") {
            if k == "seed" {
                return Err(Error::Config(
                    "stage2.seed: use the top-level `seed`".into(),
                ));
            }
            return self.stage2.set(k, v);
        }
        let p = &mut self.providers;
        match key {
            "providers.landmark" => p.landmark = one_of(key, v, &LANDMARKS)?,
            "providers.pose" => p.pose = one_of(key, v, &POSES)?,
            "providers.embedding" => {
                if v != "none" {
                    embedding_provider_by_name(v, 0)?;
                }
                p.embedding = v.to_string();
            }
            "providers.lip_reader" => p.lip_reader = one_of(key, v, &LIP_READERS)?,
            "providers.blink" => p.blink = one_of(key, v, &BLINKS)?,
            "paths.human" => self.human_dir = v.into(),
            "paths.anime" => self.anime_dir = v.into(),
            "paths.runs" => self.runs_dir = v.into(),
            "train.stage1_epochs" => self.stage1_epochs = parse_value(key, v)?,
            "train.stage2_epochs" => self.stage2_epochs = parse_value(key, v)?,
            "adapt.epochs" => self.adapt_epochs = parse_value(key, v)?,
            "adapt.lr" => self.adapt_lr = parse_value(key, v)?,
            "seed" => self.set_seed(parse_value(key, v)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(String, String)> {
        let stage = |prefix: &str, kv: KeyValues| {
            kv.into_iter()
                .filter(|(k, _)| k != "seed")
                .map(|(k, v)| (format!("{prefix}.{k}"), v))
                .collect::<Vec<_>>()
        };
        let p = &self.providers;
        let mut out = stage("stage1", self.stage1.to_kv());
        out.extend(stage("stage2", self.stage2.to_kv()));
        out.extend([
            entry("providers.landmark", &p.landmark),
            entry("providers.pose", &p.pose),
            entry("providers.embedding", &p.embedding),
            entry("providers.lip_reader", &p.lip_reader),
            entry("providers.blink", &p.blink),
            entry("paths.human", self.human_dir.display()),
            entry("paths.anime", self.anime_dir.display()),
            entry("paths.runs", self.runs_dir.display()),
            entry("train.stage1_epochs", self.stage1_epochs),
            entry("train.stage2_epochs", self.stage2_epochs),
            entry("adapt.epochs", self.adapt_epochs),
            entry("adapt.lr", self.adapt_lr),
            entry("seed", self.seed),
        ]);
        out
    }

    fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if !(self.adapt_lr.is_finite() && self.adapt_lr > 0.0) {
            bail_validation!("adapt.lr must be positive, got {}", self.adapt_lr);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_reload_keep_the_hash() {
        let mut cfg = PipelineConfig::toy(32);
        cfg.set_seed(11);
        cfg.providers.embedding = "none".into();
        let back = PipelineConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = PipelineConfig::parse("seed=3\nstage1.lambda_pl=2\npaths.runs=r").unwrap();
        let b = PipelineConfig::parse("paths.runs=r\nseed=3\nstage1.lambda_pl=2\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), PipelineConfig::default().hash());
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        assert!(PipelineConfig::parse("stage1.nonsense=1").is_err());
        assert!(PipelineConfig::parse("colour=blue").is_err());
        assert!(PipelineConfig::parse("stage1.lambda_pl=-1").is_err());
        assert!(PipelineConfig::parse("stage2.lambda_cam=-1").is_err());
        assert!(PipelineConfig::parse("providers.embedding=inception").is_err());
        assert!(PipelineConfig::parse("stage2.seed=4").is_err());
    }

    #[test]
    fn seed_drives_both_stages() {
        let cfg = PipelineConfig::parse("seed=9").unwrap();
        assert_eq!((cfg.stage1.seed, cfg.stage2.seed), (9, 9));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("au2av.cfg");
        std::fs::write(&path, "paths.human=h\npaths.runs=/abs/runs\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.human_dir, dir.path().join("h"));
        assert_eq!(cfg.runs_dir, PathBuf::from("/abs/runs"));
    }
}
