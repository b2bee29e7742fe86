//! Stage-1 adversarial training: one discriminator update then one generator
//! update per batch, losses gated by the curriculum phase.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;

use super::curriculum::{CurriculumState, StabilizationSettings};
use super::data::{Stage1Batch, Stage1Dataset};
use super::discriminator::{
    frame_discriminate, temporal_discriminate, DiscriminatorConfig, DiscriminatorOutput,
    MultiScaleDiscriminator,
};
use super::encoder::SpeechEncoderConfig;
use super::generator::{GeneratorConfig, SpadeGenerator};
use super::landmark_head::LandmarkHead;
use super::losses::{
    adversarial_loss, blink_loss_tensor, contrastive_loss, feature_matching_loss, perceptual_loss,
    reconstruction_loss_lower, stage1_objective, temporal_adversarial_loss,
    temporal_generator_loss, LossName, Phase, Side, Stage1LossWeights,
};
use super::sync::{SyncConfig, SyncDiscriminator, SYNC_FRAMES};
use crate::autograd::{seeded_rng, Adam, AdamConfig, Tensor};
use crate::bundle::LossBundle;
use crate::checkpoint::{read_archive, write_archive, write_atomic, Archive};
use crate::config::{entry, hash_kv, parse_value, KeyValues, Settings};
use crate::error::{bail_validation, Error, Result};
use crate::providers::{feature_provider_by_name, FeatureProvider};

pub const D_FRAME: &str = "D_frame";
pub const D_TEMPORAL: &str = "D_temporal";
pub const D_SYNC: &str = "D_sync";
pub const LANDMARK_FIT: &str = "landmark_fit";

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const STATE_FILE: &str = "state.txt";
pub const LOSS_LOG: &str = "losses.csv";
pub const NETWORK_FILES: [&str; 5] = [
    "generator",
    "frame_d",
    "temporal_d",
    "sync_d",
    "landmark_head",
];

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub constant_epochs: usize,
    pub decay_epochs: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            beta1: 0.0,
            beta2: 0.9,
            constant_epochs: 50,
            decay_epochs: 100,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bail_validation!("learning rate must be positive, got {}", self.learning_rate);
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bail_validation!("{name} must lie in [0, 1), got {b}");
            }
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

/// Constant for `constant_epochs`, then linear decay reaching 0 after a
/// further `decay_epochs`.
pub fn lr_schedule(epoch: usize, s: &OptimizerSettings) -> f64 {
    if epoch < s.constant_epochs {
        return s.learning_rate;
    }
    if s.decay_epochs == 0 {
        return 0.0;
    }
    let into = (epoch - s.constant_epochs) as f64;
    s.learning_rate * (1.0 - into / s.decay_epochs as f64).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub generator: GeneratorConfig,
    pub disc_channels: usize,
    /// Temporal window `L`; batches hold `L + 1` consecutive frames.
    pub temporal_window: usize,
    pub sync: SyncConfig,
    pub landmark_channels: usize,
    pub weights: Stage1LossWeights,
    pub optimizer: OptimizerSettings,
    pub stabilization: StabilizationSettings,
    pub start_phase: Phase,
    pub auto_phase: bool,
    pub perceptual: String,
    /// Keep training the sync network adversarially after pretraining.
    pub sync_adversarial: bool,
    pub sync_pretrain_steps: usize,
    pub landmark_lr: f64,
    /// 0 means every window of the dataset.
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            disc_channels: 8,
            temporal_window: 4,
            sync: SyncConfig::default(),
            landmark_channels: 8,
            weights: Stage1LossWeights::default(),
            optimizer: OptimizerSettings::default(),
            stabilization: StabilizationSettings::default(),
            start_phase: Phase::One,
            auto_phase: true,
            perceptual: "frozen-conv".to_string(),
            sync_adversarial: false,
            sync_pretrain_steps: 50,
            landmark_lr: 1e-3,
            steps_per_epoch: 0,
            seed: 0,
        }
    }
}

impl Settings for Stage1Config {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        let g = &mut self.generator;
        match key {
            "resolution" => g.resolution = parse_value(key, v)?,
            "base_channels" => g.base_channels = parse_value(key, v)?,
            "spade_hidden" => g.spade_hidden = parse_value(key, v)?,
            "encoder_conv_channels" => g.encoder.conv_channels = parse_value(key, v)?,
            "encoder_hidden" => g.encoder.hidden = parse_value(key, v)?,
            "embedding_dim" => g.encoder.embedding_dim = parse_value(key, v)?,
            "disc_channels" => self.disc_channels = parse_value(key, v)?,
            "temporal_window" => self.temporal_window = parse_value(key, v)?,
            "sync_resolution" => self.sync.resolution = parse_value(key, v)?,
            "sync_channels" => self.sync.base_channels = parse_value(key, v)?,
            "sync_embedding_dim" => self.sync.embedding_dim = parse_value(key, v)?,
            "landmark_channels" => self.landmark_channels = parse_value(key, v)?,
            "lambda_fm" => self.weights.lambda_fm = parse_value(key, v)?,
            "lambda_pl" => self.weights.lambda_pl = parse_value(key, v)?,
            "lambda_cl" => self.weights.lambda_cl = parse_value(key, v)?,
            "lambda_bl" => self.weights.lambda_bl = parse_value(key, v)?,
            "lambda_rl" => self.weights.lambda_rl = parse_value(key, v)?,
            "margin" => self.weights.margin = parse_value(key, v)?,
            "learning_rate" => self.optimizer.learning_rate = parse_value(key, v)?,
            "beta1" => self.optimizer.beta1 = parse_value(key, v)?,
            "beta2" => self.optimizer.beta2 = parse_value(key, v)?,
            "constant_epochs" => self.optimizer.constant_epochs = parse_value(key, v)?,
            "decay_epochs" => self.optimizer.decay_epochs = parse_value(key, v)?,
            "epsilon_fraction" => self.stabilization.epsilon_fraction = parse_value(key, v)?,
            "patience" => self.stabilization.patience = parse_value(key, v)?,
            "start_phase" => {
                let n: u32 = parse_value(key, v)?;
                self.start_phase = Phase::from_number(n)
                    .ok_or_else(|| Error::Config(format!("{key}: no phase {n}")))?;
            }
            "auto_phase" => self.auto_phase = parse_value(key, v)?,
            "perceptual" => self.perceptual = v.to_string(),
            "sync_adversarial" => self.sync_adversarial = parse_value(key, v)?,
            "sync_pretrain_steps" => self.sync_pretrain_steps = parse_value(key, v)?,
            "landmark_lr" => self.landmark_lr = parse_value(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(String, String)> {
        let g = &self.generator;
        let w = &self.weights;
        let o = &self.optimizer;
        vec![
            entry("resolution", g.resolution),
            entry("base_channels", g.base_channels),
            entry("spade_hidden", g.spade_hidden),
            entry("encoder_conv_channels", g.encoder.conv_channels),
            entry("encoder_hidden", g.encoder.hidden),
            entry("embedding_dim", g.encoder.embedding_dim),
            entry("disc_channels", self.disc_channels),
            entry("temporal_window", self.temporal_window),
            entry("sync_resolution", self.sync.resolution),
            entry("sync_channels", self.sync.base_channels),
            entry("sync_embedding_dim", self.sync.embedding_dim),
            entry("landmark_channels", self.landmark_channels),
            entry("lambda_fm", w.lambda_fm),
            entry("lambda_pl", w.lambda_pl),
            entry("lambda_cl", w.lambda_cl),
            entry("lambda_bl", w.lambda_bl),
            entry("lambda_rl", w.lambda_rl),
            entry("margin", w.margin),
            entry("learning_rate", o.learning_rate),
            entry("beta1", o.beta1),
            entry("beta2", o.beta2),
            entry("constant_epochs", o.constant_epochs),
            entry("decay_epochs", o.decay_epochs),
            entry("epsilon_fraction", self.stabilization.epsilon_fraction),
            entry("patience", self.stabilization.patience),
            entry("start_phase", self.start_phase.number()),
            entry("auto_phase", self.auto_phase),
            entry("perceptual", &self.perceptual),
            entry("sync_adversarial", self.sync_adversarial),
            entry("sync_pretrain_steps", self.sync_pretrain_steps),
            entry("landmark_lr", self.landmark_lr),
            entry("steps_per_epoch", self.steps_per_epoch),
            entry("seed", self.seed),
        ]
    }

    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        self.stabilization.validate()?;
        let r = self.generator.resolution;
        if r < 16 || r % 16 != 0 {
            bail_validation!("resolution must be a positive multiple of 16, got {r}");
        }
        if self.temporal_window + 1 != SYNC_FRAMES {
            bail_validation!(
                "temporal_window must be {} so temporal and sync discriminators share one window",
                SYNC_FRAMES - 1
            );
        }
        let e = &self.generator.encoder;
        for (name, v) in [
            ("base_channels", self.generator.base_channels),
            ("spade_hidden", self.generator.spade_hidden),
            ("encoder_conv_channels", e.conv_channels),
            ("encoder_hidden", e.hidden),
            ("embedding_dim", e.embedding_dim),
            ("disc_channels", self.disc_channels),
            ("sync_resolution", self.sync.resolution),
            ("sync_channels", self.sync.base_channels),
            ("sync_embedding_dim", self.sync.embedding_dim),
            ("landmark_channels", self.landmark_channels),
        ] {
            if v == 0 {
                bail_validation!("{name} must be positive");
            }
        }
        if !(self.landmark_lr.is_finite() && self.landmark_lr > 0.0) {
            bail_validation!("landmark_lr must be positive");
        }
        Ok(())
    }
}

impl Stage1Config {
    /// Hash of the keys that determine network shapes; stored in every
    /// checkpoint and checked on load.
    pub fn architecture_hash(&self) -> String {
        let arch = [
            "resolution",
            "base_channels",
            "spade_hidden",
            "encoder_conv_channels",
            "encoder_hidden",
            "embedding_dim",
            "disc_channels",
            "temporal_window",
            "sync_resolution",
            "sync_channels",
            "sync_embedding_dim",
            "landmark_channels",
        ];
        let kv: KeyValues = self
            .entries()
            .into_iter()
            .filter(|(k, _)| arch.contains(&k.as_str()))
            .collect();
        hash_kv(&kv)
    }

    /// Small networks for tests and demos.
    pub fn toy(resolution: usize) -> Self {
        Self {
            generator: GeneratorConfig {
                resolution,
                base_channels: 8,
                spade_hidden: 8,
                encoder: SpeechEncoderConfig {
                    conv_channels: 8,
                    hidden: 8,
                    embedding_dim: 32,
                },
            },
            disc_channels: 4,
            sync: SyncConfig {
                resolution: 16,
                base_channels: 4,
                embedding_dim: 32,
            },
            landmark_channels: 4,
            sync_pretrain_steps: 10,
            ..Self::default()
        }
    }

    fn window_len(&self) -> usize {
        self.temporal_window + 1
    }
}

/// Every Stage-1 network with its optimizer.
pub struct Stage1Networks {
    pub generator: SpadeGenerator,
    pub frame_d: MultiScaleDiscriminator,
    pub temporal_d: MultiScaleDiscriminator,
    pub sync_d: SyncDiscriminator,
    pub landmark_head: LandmarkHead,
    pub opt_g: Adam,
    pub opt_frame_d: Adam,
    pub opt_temporal_d: Adam,
    pub opt_sync_d: Adam,
    pub opt_landmark: Adam,
}

impl Stage1Networks {
    pub fn new(cfg: &Stage1Config) -> Result<Self> {
        let seed = cfg.seed;
        let l1 = cfg.window_len();
        let generator = SpadeGenerator::new(cfg.generator.clone(), seed)?;
        let frame_d = MultiScaleDiscriminator::new(
            DiscriminatorConfig {
                in_channels: 6,
                out_channels: 1,
                base_channels: cfg.disc_channels,
            },
            seed.wrapping_add(1),
        )?;
        let temporal_d = MultiScaleDiscriminator::new(
            DiscriminatorConfig {
                in_channels: 3 * l1,
                out_channels: l1,
                base_channels: cfg.disc_channels,
            },
            seed.wrapping_add(2),
        )?;
        let sync_d = SyncDiscriminator::new(cfg.sync.clone(), seed.wrapping_add(3))?;
        let landmark_head = LandmarkHead::new(
            cfg.generator.resolution,
            cfg.landmark_channels,
            seed.wrapping_add(4),
        )?;
        let lr = cfg.optimizer.learning_rate;
        let adam = cfg.optimizer.adam(lr);
        Ok(Self {
            opt_g: Adam::new(adam, &generator.store),
            opt_frame_d: Adam::new(adam, &frame_d.store),
            opt_temporal_d: Adam::new(adam, &temporal_d.store),
            opt_sync_d: Adam::new(adam, &sync_d.store),
            opt_landmark: Adam::new(
                AdamConfig {
                    lr: cfg.landmark_lr,
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                &landmark_head.store,
            ),
            generator,
            frame_d,
            temporal_d,
            sync_d,
            landmark_head,
        })
    }

    /// Learning rate for the generator and every adversarial discriminator.
    pub fn set_lr(&mut self, lr: f64) {
        self.opt_g.set_lr(lr);
        self.opt_frame_d.set_lr(lr);
        self.opt_temporal_d.set_lr(lr);
        self.opt_sync_d.set_lr(lr);
    }

    fn parts(&self) -> [(&str, &crate::autograd::ParamStore, &Adam); 5] {
        [
            (NETWORK_FILES[0], &self.generator.store, &self.opt_g),
            (NETWORK_FILES[1], &self.frame_d.store, &self.opt_frame_d),
            (
                NETWORK_FILES[2],
                &self.temporal_d.store,
                &self.opt_temporal_d,
            ),
            (NETWORK_FILES[3], &self.sync_d.store, &self.opt_sync_d),
            (
                NETWORK_FILES[4],
                &self.landmark_head.store,
                &self.opt_landmark,
            ),
        ]
    }

    /// One `<network>.bin` archive per network, with optimizer state.
    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        for (name, store, opt) in self.parts() {
            let mut archive = Archive::from_store(store, Some(opt));
            archive
                .meta
                .insert("config_hash".into(), config_hash.to_string());
            archive.meta.insert("network".into(), name.to_string());
            write_archive(&dir.join(format!("{name}.bin")), &archive)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, cfg: &Stage1Config) -> Result<Self> {
        let mut nets = Self::new(cfg)?;
        let hash = cfg.architecture_hash();
        let Self {
            generator,
            frame_d,
            temporal_d,
            sync_d,
            landmark_head,
            opt_g,
            opt_frame_d,
            opt_temporal_d,
            opt_sync_d,
            opt_landmark,
        } = &mut nets;
        let parts = [
            (NETWORK_FILES[0], &mut generator.store, opt_g),
            (NETWORK_FILES[1], &mut frame_d.store, opt_frame_d),
            (NETWORK_FILES[2], &mut temporal_d.store, opt_temporal_d),
            (NETWORK_FILES[3], &mut sync_d.store, opt_sync_d),
            (NETWORK_FILES[4], &mut landmark_head.store, opt_landmark),
        ];
        for (name, store, opt) in parts {
            let archive = read_archive(&dir.join(format!("{name}.bin")))?;
            check_hash(&archive, &hash, name)?;
            archive.restore_store(store)?;
            archive.restore_adam(store, opt)?;
        }
        Ok(nets)
    }
}

pub(crate) fn check_hash(archive: &Archive, want: &str, name: &str) -> Result<()> {
    match archive.meta.get("config_hash") {
        Some(h) if h == want => Ok(()),
        Some(h) => Err(Error::Checkpoint(format!(
            "{name}: checkpoint config hash {h} does not match configuration {want}"
        ))),
        None => Err(Error::Checkpoint(format!(
            "{name}: checkpoint has no config hash"
        ))),
    }
}

/// Load only the generator weights of a Stage-1 checkpoint directory.
pub fn load_generator(dir: &Path, cfg: &Stage1Config) -> Result<SpadeGenerator> {
    let mut g = SpadeGenerator::new(cfg.generator.clone(), cfg.seed)?;
    let archive = read_archive(&dir.join(format!("{}.bin", NETWORK_FILES[0])))?;
    check_hash(&archive, &cfg.architecture_hash(), NETWORK_FILES[0])?;
    archive.restore_store(&mut g.store)?;
    Ok(g)
}

fn repeat_rows(x: &Tensor, n: usize) -> Result<Tensor> {
    if x.shape()[0] == n {
        return Ok(x.clone());
    }
    Tensor::cat(&vec![x.clone(); n], 0)
}

/// Score maps of each window position, grouped per scale.
fn positions_per_scale(out: &DiscriminatorOutput, positions: usize) -> Result<Vec<Vec<Tensor>>> {
    out.score_maps
        .iter()
        .map(|s| (0..positions).map(|i| s.narrow(1, i, 1)).collect())
        .collect()
}

fn require_finite(name: &str, t: &Tensor) -> Result<f64> {
    let v = t.to_scalar()?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            loss: name.to_string(),
            value: v,
        });
    }
    Ok(v)
}

/// One discriminator update followed by one generator update.
///
/// The returned bundle holds the generator-side value of every phase-active
/// loss, the discriminator losses of this step, and the landmark-head fit
/// loss when landmarks were supplied.
pub fn train_step(
    batch: &Stage1Batch,
    nets: &mut Stage1Networks,
    cfg: &Stage1Config,
    curriculum: &CurriculumState,
    perceptual: &dyn FeatureProvider,
) -> Result<LossBundle> {
    let phase = curriculum.phase;
    let active = phase.active_losses();
    let l = cfg.temporal_window;
    let k = batch.len();
    let temporal = active.contains(&LossName::Tal);
    let sync = active.contains(&LossName::Cl);
    let blink = active.contains(&LossName::Bl);
    if blink && batch.landmarks.is_none() {
        return Err(Error::Precondition(format!(
            "phase {} needs eye landmarks for the blink loss",
            phase.number()
        )));
    }
    if (temporal || sync) && k != l + 1 {
        return Err(Error::Precondition(format!(
            "phase {} needs windows of {} frames, got {k}",
            phase.number(),
            l + 1
        )));
    }
    let identity = repeat_rows(&batch.identity, k)?;
    let real = &batch.frames;
    let mut report = LossBundle::new();

    let pg = nets.generator.store.bind(true);
    let fake = nets.generator.forward(&pg, &identity, &batch.mfcc)?;
    let fake_const = fake.detach();

    // Discriminator updates.
    {
        let pd = nets.frame_d.store.bind(true);
        let r = frame_discriminate(&nets.frame_d, &pd, real, &identity)?;
        let f = frame_discriminate(&nets.frame_d, &pd, &fake_const, &identity)?;
        let loss = adversarial_loss(&r.score_maps, &f.score_maps, Side::Discriminator)?;
        require_finite(D_FRAME, &loss)?;
        let g = loss.backward()?;
        nets.opt_frame_d
            .step(&mut nets.frame_d.store, &pd.grads(&g))?;
        report.insert(D_FRAME, loss.detach());
    }
    if temporal {
        let pd = nets.temporal_d.store.bind(true);
        let r = temporal_discriminate(&nets.temporal_d, &pd, real, l)?;
        let f = temporal_discriminate(&nets.temporal_d, &pd, &fake_const, l)?;
        let (rs, fs) = (
            positions_per_scale(&r, l + 1)?,
            positions_per_scale(&f, l + 1)?,
        );
        let mut objective = Tensor::scalar(0.0);
        for (rk, fk) in rs.iter().zip(&fs) {
            objective = objective.add(&temporal_adversarial_loss(rk, fk, l)?)?;
        }
        // The discriminator maximizes the objective.
        let loss = objective.neg();
        require_finite(D_TEMPORAL, &loss)?;
        let g = loss.backward()?;
        nets.opt_temporal_d
            .step(&mut nets.temporal_d.store, &pd.grads(&g))?;
        report.insert(D_TEMPORAL, loss.detach());
    }
    if sync && cfg.sync_adversarial {
        let ps = nets.sync_d.store.bind(true);
        let video = Tensor::cat(
            &[
                nets.sync_d.video_input(real)?,
                nets.sync_d.video_input(&fake_const)?,
            ],
            0,
        )?;
        let audio = Tensor::cat(&[batch.sync_audio.clone(), batch.sync_audio.clone()], 0)?;
        let pair = nets.sync_d.embed(&ps, &video, &audio)?;
        let loss = contrastive_loss(&pair.v, &pair.a, &[1.0, 0.0], cfg.weights.margin)?;
        require_finite(D_SYNC, &loss)?;
        let g = loss.backward()?;
        nets.opt_sync_d
            .step(&mut nets.sync_d.store, &ps.grads(&g))?;
        report.insert(D_SYNC, loss.detach());
    }
    if let Some(lm) = &batch.landmarks {
        let r = real.shape()[2];
        let ph = nets.landmark_head.store.bind(true);
        let loss = nets.landmark_head.regression_loss(&ph, real, lm, r, r)?;
        require_finite(LANDMARK_FIT, &loss)?;
        let g = loss.backward()?;
        nets.opt_landmark
            .step(&mut nets.landmark_head.store, &ph.grads(&g))?;
        report.insert(LANDMARK_FIT, loss.detach());
    }

    // Generator update against the freshly updated discriminators.
    let mut bundle = LossBundle::new();
    let pd = nets.frame_d.store.bind(false);
    let r = frame_discriminate(&nets.frame_d, &pd, real, &identity)?.detached();
    let f = frame_discriminate(&nets.frame_d, &pd, &fake, &identity)?;
    bundle.insert(
        LossName::Gan.as_str(),
        adversarial_loss(&[], &f.score_maps, Side::Generator)?,
    );
    bundle.insert(
        LossName::Fm.as_str(),
        feature_matching_loss(&r.features, &f.features)?,
    );
    bundle.insert(
        LossName::Pl.as_str(),
        perceptual_loss(&fake, real, perceptual, 1.0)?,
    );
    if active.contains(&LossName::Rl) {
        bundle.insert(
            LossName::Rl.as_str(),
            reconstruction_loss_lower(real, &fake)?,
        );
    }
    if temporal {
        let pt = nets.temporal_d.store.bind(false);
        let out = temporal_discriminate(&nets.temporal_d, &pt, &fake, l)?;
        let mut total = Tensor::scalar(0.0);
        for fk in positions_per_scale(&out, l + 1)? {
            total = total.add(&temporal_generator_loss(&fk)?)?;
        }
        bundle.insert(LossName::Tal.as_str(), total);
    }
    if sync {
        let ps = nets.sync_d.store.bind(false);
        let pair = nets
            .sync_d
            .embed(&ps, &nets.sync_d.video_input(&fake)?, &batch.sync_audio)?;
        bundle.insert(
            LossName::Cl.as_str(),
            contrastive_loss(&pair.v, &pair.a, &[1.0], cfg.weights.margin)?,
        );
    }
    if let (true, Some(lm)) = (blink, &batch.landmarks) {
        let ear_real: Vec<f64> = lm.iter().map(|f| f.ear()).collect::<Result<_>>()?;
        let ph = nets.landmark_head.store.bind(false);
        let ear_fake = nets.landmark_head.ear(&ph, &fake)?;
        bundle.insert(
            LossName::Bl.as_str(),
            blink_loss_tensor(&Tensor::new(ear_real, &[k])?, &ear_fake)?,
        );
    }
    bundle.check_finite()?;
    let objective = stage1_objective(&bundle, &cfg.weights, phase)?;
    require_finite("objective", &objective)?;
    let g = objective.backward()?;
    nets.opt_g.step(&mut nets.generator.store, &pg.grads(&g))?;

    for (name, v) in bundle.values() {
        report.insert(&name, Tensor::scalar(v));
    }
    Ok(report)
}

/// Contrastive pretraining of the sync network on genuine windows and on
/// windows paired with audio from elsewhere. Returns the loss trace.
pub fn pretrain_sync(
    nets: &mut Stage1Networks,
    dataset: &Stage1Dataset,
    cfg: &Stage1Config,
    steps: usize,
) -> Result<Vec<f64>> {
    let windows = dataset.windows(SYNC_FRAMES);
    if windows.is_empty() {
        bail_validation!("no clip has {SYNC_FRAMES} frames for sync pretraining");
    }
    let batches: Vec<Stage1Batch> = windows
        .iter()
        .map(|&(c, s)| dataset.clips[c].window(s, SYNC_FRAMES))
        .collect::<Result<_>>()?;
    let n = batches.len();
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let i = step % n;
        let b = &batches[i];
        // Audio from a window far away, or time-reversed when there is none.
        let negative = if n > 1 {
            batches[(i + n / 2).max(i + 1) % n].sync_audio.clone()
        } else {
            let t = b.sync_audio.shape()[3];
            let cols: Vec<Tensor> = (0..t)
                .rev()
                .map(|j| b.sync_audio.narrow(3, j, 1))
                .collect::<Result<_>>()?;
            Tensor::cat(&cols, 3)?
        };
        let ps = nets.sync_d.store.bind(true);
        let v = nets.sync_d.video_input(&b.frames)?;
        let video = Tensor::cat(&[v.clone(), v], 0)?;
        let audio = Tensor::cat(&[b.sync_audio.clone(), negative], 0)?;
        let pair = nets.sync_d.embed(&ps, &video, &audio)?;
        let loss = contrastive_loss(&pair.v, &pair.a, &[1.0, 0.0], cfg.weights.margin)?;
        trace.push(require_finite(D_SYNC, &loss)?);
        let g = loss.backward()?;
        nets.opt_sync_d
            .step(&mut nets.sync_d.store, &ps.grads(&g))?;
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub phase: Phase,
    /// Mean of each reported loss over the epoch's steps.
    pub losses: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoints: Vec<PathBuf>,
    pub epochs: Vec<EpochLog>,
}

pub fn epoch_dir_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}")
}

/// Highest-numbered complete `epoch_NNNN` directory under `checkpoints`.
pub fn latest_checkpoint(checkpoints: &Path) -> Result<Option<(usize, PathBuf)>> {
    if !checkpoints.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for e in fs::read_dir(checkpoints).map_err(|e| Error::io(checkpoints, e))? {
        let p = e.map_err(|e| Error::io(checkpoints, e))?.path();
        let Some(n) = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch_"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if p.join(STATE_FILE).is_file() && best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, p));
        }
    }
    Ok(best)
}

/// Write a checkpoint into a temporary directory and rename it into place;
/// on failure the partial directory is removed.
pub(crate) fn commit_checkpoint_dir(
    final_dir: &Path,
    fill: impl FnOnce(&Path) -> Result<()>,
) -> Result<()> {
    let mut tmp_name = final_dir
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(".partial");
    let tmp = final_dir.with_file_name(tmp_name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let res = fill(&tmp).and_then(|()| {
        if final_dir.exists() {
            fs::remove_dir_all(final_dir).map_err(|e| Error::io(final_dir, e))?;
        }
        fs::rename(&tmp, final_dir).map_err(|e| Error::io(final_dir, e))
    });
    if res.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    res
}

fn parse_trainer_state(text: &str) -> Result<(CurriculumState, String)> {
    let state = CurriculumState::parse(text)?;
    let hash = text
        .lines()
        .find_map(|l| l.strip_prefix("config_hash="))
        .ok_or_else(|| Error::Checkpoint("state file has no config hash".into()))?;
    Ok((state, hash.trim().to_string()))
}

/// Rewrite the loss log keeping only rows up to `epoch` (all rows when
/// `epoch` is None, header only when the file is new).
fn prepare_loss_log(path: &Path, keep_through: Option<usize>) -> Result<()> {
    let mut out = String::from("epoch,phase,loss_name,value\n");
    if let (Some(limit), Ok(text)) = (keep_through, fs::read_to_string(path)) {
        for line in text.lines().skip(1) {
            let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
            if epoch.is_some_and(|e| e <= limit) {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

pub(crate) fn append_loss_rows(path: &Path, log: &EpochLog) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut rows = String::new();
    for (name, v) in &log.losses {
        rows.push_str(&format!(
            "{},{},{},{:e}\n",
            log.epoch,
            log.phase.number(),
            name,
            v
        ));
    }
    f.write_all(rows.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a loss log back into per-epoch records.
pub fn read_loss_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<EpochLog> = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::Validation(format!("{}: bad row `{line}`", path.display()));
        if cols.len() != 4 {
            return Err(bad());
        }
        let epoch: usize = cols[0].parse().map_err(|_| bad())?;
        let phase = cols[1]
            .parse()
            .ok()
            .and_then(Phase::from_number)
            .ok_or_else(bad)?;
        let value: f64 = cols[3].parse().map_err(|_| bad())?;
        if out.last().is_none_or(|l| l.epoch != epoch) {
            out.push(EpochLog {
                epoch,
                phase,
                losses: BTreeMap::new(),
            });
        }
        out.last_mut()
            .expect("pushed above")
            .losses
            .insert(cols[2].to_string(), value);
    }
    Ok(out)
}

/// Train for `epochs` more epochs, writing `checkpoints/epoch_NNNN/` and
/// `losses.csv` under `out_dir`. With `resume`, training continues from the
/// latest checkpoint there.
pub fn train(
    dataset: &Stage1Dataset,
    cfg: &Stage1Config,
    out_dir: &Path,
    epochs: usize,
    resume: bool,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let r = dataset.clips[0].resolution();
    if r != cfg.generator.resolution {
        bail_validation!(
            "dataset resolution {r} differs from configured {}",
            cfg.generator.resolution
        );
    }
    let len = cfg.window_len();
    let windows = dataset.windows(len);
    if windows.is_empty() {
        bail_validation!("no clip has the {len} frames a training window needs");
    }
    let hash = cfg.architecture_hash();
    let ckpt_root = out_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_root).map_err(|e| Error::io(&ckpt_root, e))?;
    let log_path = out_dir.join(LOSS_LOG);
    let perceptual = feature_provider_by_name(&cfg.perceptual, cfg.seed.wrapping_add(5))?;

    let resumed = if resume {
        latest_checkpoint(&ckpt_root)?
    } else {
        None
    };
    let (mut nets, mut curriculum) = match &resumed {
        Some((epoch, dir)) => {
            let text = fs::read_to_string(dir.join(STATE_FILE)).map_err(|e| Error::io(dir, e))?;
            let (state, saved_hash) = parse_trainer_state(&text)?;
            if saved_hash != hash {
                return Err(Error::Checkpoint(format!(
                    "{}: config hash {saved_hash} does not match configuration {hash}",
                    dir.display()
                )));
            }
            info!(
                "resuming from {} (epoch {epoch}, phase {})",
                dir.display(),
                state.phase.number()
            );
            prepare_loss_log(&log_path, Some(*epoch))?;
            (Stage1Networks::load(dir, cfg)?, state)
        }
        None => {
            let mut nets = Stage1Networks::new(cfg)?;
            if cfg.sync_pretrain_steps > 0 {
                let trace = pretrain_sync(&mut nets, dataset, cfg, cfg.sync_pretrain_steps)?;
                info!(
                    "sync pretraining: contrastive loss {:.4} -> {:.4}",
                    trace.first().copied().unwrap_or(0.0),
                    trace.last().copied().unwrap_or(0.0)
                );
            }
            let mut state = CurriculumState::new(cfg.stabilization.clone());
            state.automatic = cfg.auto_phase;
            state.advance_to(cfg.start_phase)?;
            prepare_loss_log(&log_path, None)?;
            (nets, state)
        }
    };
    // A configured start phase also applies on resume (phases never go back).
    if cfg.start_phase > curriculum.phase {
        curriculum.advance_to(cfg.start_phase)?;
    }
    curriculum.automatic = cfg.auto_phase;

    let mut summary = TrainSummary {
        checkpoints: Vec::new(),
        epochs: Vec::new(),
    };
    let first = curriculum.epoch;
    for epoch in first..first + epochs {
        nets.set_lr(lr_schedule(epoch, &cfg.optimizer));
        let mut order = windows.clone();
        order.shuffle(&mut seeded_rng(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ));
        if cfg.steps_per_epoch > 0 {
            order.truncate(cfg.steps_per_epoch);
        }
        let phase = curriculum.phase;
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for &(c, s) in &order {
            let batch = dataset.clips[c].window(s, len)?;
            let report = train_step(&batch, &mut nets, cfg, &curriculum, perceptual.as_ref())?;
            for (name, v) in report.values() {
                let e = sums.entry(name).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let losses: BTreeMap<String, f64> = sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect();
        let by_name: BTreeMap<LossName, f64> = losses
            .iter()
            .filter_map(|(k, &v)| LossName::parse(k).map(|n| (n, v)))
            .collect();
        if let Some(next) = curriculum.observe_epoch(&by_name) {
            info!("losses stabilized; entering phase {}", next.number());
        }
        let log = EpochLog {
            epoch: epoch + 1,
            phase,
            losses,
        };
        let dir = ckpt_root.join(epoch_dir_name(epoch + 1));
        let state_text = format!("{}config_hash={hash}\n", curriculum.render());
        commit_checkpoint_dir(&dir, |tmp| {
            nets.save(tmp, &hash)?;
            write_atomic(&tmp.join(STATE_FILE), state_text.as_bytes())
        })?;
        append_loss_rows(&log_path, &log)?;
        info!(
            "epoch {} phase {}: {}",
            log.epoch,
            phase.number(),
            log.losses
                .iter()
                .map(|(k, v)| format!("{k}={v:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        summary.checkpoints.push(dir);
        summary.epochs.push(log);
    }
    Ok(summary)
}
