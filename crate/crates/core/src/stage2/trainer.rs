//! Stage-2 unpaired training: per step, discriminators then predictors then
//! generators, each on one window of `t + 1` frames from each domain.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;

use super::adalin::clip_rho;
use super::data::{split_frames, Stage2Dataset, Stage2Window};
use super::discriminator::{Critic, CriticConfig, CriticOutput};
use super::generator::{Translator, TranslatorConfig};
use super::losses::{
    cam_loss, identity_loss, lip_sync_loss, lsgan_loss, predictor_loss, recycle_from_translated,
    stage2_blink_loss, stage2_objective, Stage2LossWeights, BL, CAM, GAN, IDENTITY, LIP, RECYCLE,
};
use super::predictor::{Predictor, PredictorConfig, DEFAULT_PAST_FRAMES};
use crate::autograd::{seeded_rng, Adam, AdamConfig, Bound, ParamStore, Tensor};
use crate::bundle::LossBundle;
use crate::checkpoint::{read_archive, write_archive, write_atomic, Archive};
use crate::config::{entry, hash_kv, parse_value, KeyValues, Settings};
use crate::error::{bail_validation, Error, Result};
use crate::stage1::landmark_head::LandmarkHead;
use crate::stage1::losses::Side;
use crate::stage1::trainer::{
    check_hash, commit_checkpoint_dir, epoch_dir_name, latest_checkpoint,
};

pub const D_TARGET: &str = "D_t";
pub const D_SOURCE: &str = "D_s";
pub const P_SOURCE: &str = "P_s";
pub const P_TARGET: &str = "P_t";
pub const LANDMARK_FIT: &str = "landmark_fit";

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const STATE_FILE: &str = "state.txt";
pub const LOSS_LOG: &str = "losses.csv";
pub const NETWORK_FILES: [&str; 7] = [
    "gen_s2t",
    "gen_t2s",
    "disc_t",
    "disc_s",
    "predictor_s",
    "predictor_t",
    "landmark_head",
];

/// Which frames the identity term feeds through each generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdentityForm {
    /// Target-domain frames through the source-to-target generator and
    /// vice versa.
    Symmetric,
    /// Each generator's own input domain through it.
    Literal,
}

impl IdentityForm {
    pub fn as_str(self) -> &'static str {
        match self {
            IdentityForm::Symmetric => "symmetric",
            IdentityForm::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "symmetric" => Some(IdentityForm::Symmetric),
            "literal" => Some(IdentityForm::Literal),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub translator: TranslatorConfig,
    pub critic_channels: usize,
    pub predictor_channels: usize,
    pub past_frames: usize,
    pub landmark_channels: usize,
    pub weights: Stage2LossWeights,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub landmark_lr: f64,
    pub identity_form: IdentityForm,
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            translator: TranslatorConfig::default(),
            critic_channels: 16,
            predictor_channels: 16,
            past_frames: DEFAULT_PAST_FRAMES,
            landmark_channels: 8,
            weights: Stage2LossWeights::default(),
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            landmark_lr: 1e-3,
            identity_form: IdentityForm::Symmetric,
            steps_per_epoch: 0,
            seed: 0,
        }
    }
}

impl Settings for Stage2Config {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        let t = &mut self.translator;
        let w = &mut self.weights;
        match key {
            "resolution" => t.resolution = parse_value(key, v)?,
            "base_channels" => t.base_channels = parse_value(key, v)?,
            "residual_blocks" => t.residual_blocks = parse_value(key, v)?,
            "critic_channels" => self.critic_channels = parse_value(key, v)?,
            "predictor_channels" => self.predictor_channels = parse_value(key, v)?,
            "past_frames" => self.past_frames = parse_value(key, v)?,
            "landmark_channels" => self.landmark_channels = parse_value(key, v)?,
            "lambda_cam" => w.lambda_cam = parse_value(key, v)?,
            "lambda_recycle" => w.lambda_recycle = parse_value(key, v)?,
            "lambda_identity" => w.lambda_identity = parse_value(key, v)?,
            "lambda_lip" => w.lambda_lip = parse_value(key, v)?,
            "lambda_bl" => w.lambda_bl = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "landmark_lr" => self.landmark_lr = parse_value(key, v)?,
            "identity_form" => {
                self.identity_form = IdentityForm::parse(v).ok_or_else(|| {
                    Error::Config(format!("{key}: expected symmetric or literal, got `{v}`"))
                })?
            }
            "steps_per_epoch" => self.steps_per_epoch = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(String, String)> {
        let t = &self.translator;
        let w = &self.weights;
        vec![
            entry("resolution", t.resolution),
            entry("base_channels", t.base_channels),
            entry("residual_blocks", t.residual_blocks),
            entry("critic_channels", self.critic_channels),
            entry("predictor_channels", self.predictor_channels),
            entry("past_frames", self.past_frames),
            entry("landmark_channels", self.landmark_channels),
            entry("lambda_cam", w.lambda_cam),
            entry("lambda_recycle", w.lambda_recycle),
            entry("lambda_identity", w.lambda_identity),
            entry("lambda_lip", w.lambda_lip),
            entry("lambda_bl", w.lambda_bl),
            entry("learning_rate", self.learning_rate),
            entry("beta1", self.beta1),
            entry("beta2", self.beta2),
            entry("landmark_lr", self.landmark_lr),
            entry("identity_form", self.identity_form.as_str()),
            entry("steps_per_epoch", self.steps_per_epoch),
            entry("seed", self.seed),
        ]
    }

    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.translator.validate()?;
        self.critic().validate()?;
        self.predictor().validate()?;
        for (name, v) in [
            ("critic_channels", self.critic_channels),
            ("predictor_channels", self.predictor_channels),
            ("landmark_channels", self.landmark_channels),
        ] {
            if v == 0 {
                bail_validation!("{name} must be positive");
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bail_validation!("learning_rate must be positive, got {}", self.learning_rate);
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bail_validation!("{name} must lie in [0, 1), got {b}");
            }
        }
        if !(self.landmark_lr.is_finite() && self.landmark_lr > 0.0) {
            bail_validation!("landmark_lr must be positive");
        }
        Ok(())
    }
}

impl Stage2Config {
    pub fn architecture_hash(&self) -> String {
        let arch = [
            "resolution",
            "base_channels",
            "residual_blocks",
            "critic_channels",
            "predictor_channels",
            "past_frames",
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
            translator: TranslatorConfig {
                resolution,
                base_channels: 8,
                residual_blocks: 4,
            },
            critic_channels: 4,
            predictor_channels: 4,
            landmark_channels: 4,
            ..Self::default()
        }
    }

    pub fn critic(&self) -> CriticConfig {
        CriticConfig {
            resolution: self.translator.resolution,
            base_channels: self.critic_channels,
        }
    }

    pub fn predictor(&self) -> PredictorConfig {
        PredictorConfig {
            past_frames: self.past_frames,
            resolution: self.translator.resolution,
            base_channels: self.predictor_channels,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }

    pub fn window_len(&self) -> usize {
        self.past_frames + 1
    }
}

/// Every Stage-2 network with its optimizer.
pub struct Stage2Networks {
    pub gen_s2t: Translator,
    pub gen_t2s: Translator,
    pub disc_t: Critic,
    pub disc_s: Critic,
    pub predictor_s: Predictor,
    pub predictor_t: Predictor,
    pub landmark_head: LandmarkHead,
    /// One optimizer per entry of [`NETWORK_FILES`], in that order.
    pub optimizers: Vec<Adam>,
}

impl Stage2Networks {
    pub fn new(cfg: &Stage2Config) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.seed;
        let mut nets = Self {
            gen_s2t: Translator::new(cfg.translator, s)?,
            gen_t2s: Translator::new(cfg.translator, s.wrapping_add(1))?,
            disc_t: Critic::new(cfg.critic(), s.wrapping_add(2))?,
            disc_s: Critic::new(cfg.critic(), s.wrapping_add(3))?,
            predictor_s: Predictor::new(cfg.predictor(), s.wrapping_add(4))?,
            predictor_t: Predictor::new(cfg.predictor(), s.wrapping_add(5))?,
            landmark_head: LandmarkHead::new(
                cfg.translator.resolution,
                cfg.landmark_channels,
                s.wrapping_add(6),
            )?,
            optimizers: Vec::new(),
        };
        let landmark = AdamConfig {
            lr: cfg.landmark_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        nets.optimizers = nets
            .stores()
            .iter()
            .enumerate()
            .map(|(i, st)| Adam::new(if i == 6 { landmark } else { cfg.adam() }, st))
            .collect();
        Ok(nets)
    }

    pub fn stores(&self) -> [&ParamStore; 7] {
        [
            &self.gen_s2t.store,
            &self.gen_t2s.store,
            &self.disc_t.store,
            &self.disc_s.store,
            &self.predictor_s.store,
            &self.predictor_t.store,
            &self.landmark_head.store,
        ]
    }

    fn stores_mut(&mut self) -> [&mut ParamStore; 7] {
        [
            &mut self.gen_s2t.store,
            &mut self.gen_t2s.store,
            &mut self.disc_t.store,
            &mut self.disc_s.store,
            &mut self.predictor_s.store,
            &mut self.predictor_t.store,
            &mut self.landmark_head.store,
        ]
    }

    /// Adam step on network `i` (an index into [`NETWORK_FILES`]).
    fn step(&mut self, i: usize, p: &Bound, grads: &crate::autograd::Gradients) -> Result<()> {
        let g = p.grads(grads);
        let mut opts = std::mem::take(&mut self.optimizers);
        let res = opts[i].step(self.stores_mut()[i], &g);
        self.optimizers = opts;
        res
    }

    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        for ((name, store), opt) in NETWORK_FILES
            .iter()
            .zip(self.stores())
            .zip(&self.optimizers)
        {
            let mut archive = Archive::from_store(store, Some(opt));
            archive
                .meta
                .insert("config_hash".into(), config_hash.to_string());
            archive.meta.insert("network".into(), name.to_string());
            write_archive(&dir.join(format!("{name}.bin")), &archive)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, cfg: &Stage2Config) -> Result<Self> {
        let mut nets = Self::new(cfg)?;
        let hash = cfg.architecture_hash();
        let mut opts = std::mem::take(&mut nets.optimizers);
        for ((name, store), opt) in NETWORK_FILES
            .iter()
            .zip(nets.stores_mut())
            .zip(opts.iter_mut())
        {
            let archive = read_archive(&dir.join(format!("{name}.bin")))?;
            check_hash(&archive, &hash, name)?;
            archive.restore_store(store)?;
            archive.restore_adam(store, opt)?;
        }
        nets.optimizers = opts;
        Ok(nets)
    }
}

/// Load one translator from a Stage-2 checkpoint directory; `name` is
/// `gen_s2t` or `gen_t2s`.
pub fn load_translator(dir: &Path, cfg: &Stage2Config, name: &str) -> Result<Translator> {
    let seed = match name {
        "gen_s2t" => cfg.seed,
        "gen_t2s" => cfg.seed.wrapping_add(1),
        _ => bail_validation!("no translator named {name}"),
    };
    let mut g = Translator::new(cfg.translator, seed)?;
    let archive = read_archive(&dir.join(format!("{name}.bin")))?;
    check_hash(&archive, &cfg.architecture_hash(), name)?;
    archive.restore_store(&mut g.store)?;
    Ok(g)
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

/// Least-squares loss on both heads plus the cross-entropy of the heads'
/// auxiliary classifiers (real labelled 1, fake 0).
fn critic_loss(real: &CriticOutput, fake: &CriticOutput) -> Result<Tensor> {
    let mut loss = lsgan_loss(&real.scores(), &fake.scores(), Side::Discriminator)?;
    for (r, f) in real.cam_logits().iter().zip(fake.cam_logits()) {
        loss = loss.add(&cam_loss(r, f)?)?;
    }
    Ok(loss)
}

/// Generator side of [`critic_loss`].
fn fooling_loss(fake: &CriticOutput) -> Result<Tensor> {
    let mut loss = lsgan_loss(&[], &fake.scores(), Side::Generator)?;
    for f in fake.cam_logits() {
        loss = loss.add(&f.neg().softplus().mean_all()?)?;
    }
    Ok(loss)
}

/// One update of every Stage-2 network on a source window `a` and a target
/// window `b`, both of `t + 1` frames.
///
/// The returned bundle holds the discriminator and predictor losses of this
/// step and the generator-side value of every loss term.
pub fn stage2_train_step(
    a: &Stage2Window,
    b: &Stage2Window,
    nets: &mut Stage2Networks,
    cfg: &Stage2Config,
) -> Result<LossBundle> {
    let t = cfg.past_frames;
    if a.len() != t + 1 || b.len() != t + 1 {
        return Err(Error::Precondition(format!(
            "stage-2 steps need windows of {} frames, got {} and {}",
            t + 1,
            a.len(),
            b.len()
        )));
    }
    let blink = cfg.weights.lambda_bl > 0.0;
    if blink && a.landmarks.is_none() {
        return Err(Error::Precondition(
            "the blink term needs eye landmarks for the source domain".into(),
        ));
    }
    let (x, y) = (&a.frames, &b.frames);
    let mut report = LossBundle::new();

    let pg_s2t = nets.gen_s2t.store.bind(true);
    let pg_t2s = nets.gen_t2s.store.bind(true);
    let to_t = nets.gen_s2t.forward(&pg_s2t, x)?;
    let to_s = nets.gen_t2s.forward(&pg_t2s, y)?;

    // Discriminators on real frames against detached translations.
    for (i, name, real, fake) in [
        (2, D_TARGET, y, &to_t.frames),
        (3, D_SOURCE, x, &to_s.frames),
    ] {
        let critic = if i == 2 { &nets.disc_t } else { &nets.disc_s };
        let pd = critic.store.bind(true);
        let loss = critic_loss(
            &critic.forward(&pd, real)?,
            &critic.forward(&pd, &fake.detach())?,
        )?;
        require_finite(name, &loss)?;
        nets.step(i, &pd, &loss.backward()?)?;
        report.insert(name, loss.detach());
    }

    // Predictors on real frames of their own domain.
    for (i, name, frames) in [(4, P_SOURCE, x), (5, P_TARGET, y)] {
        let predictor = if i == 4 {
            &nets.predictor_s
        } else {
            &nets.predictor_t
        };
        let pp = predictor.store.bind(true);
        let loss = predictor_loss(&split_frames(frames)?, t, |f| predictor.predict(&pp, f))?;
        require_finite(name, &loss)?;
        nets.step(i, &pp, &loss.backward()?)?;
        report.insert(name, loss.detach());
    }

    if let Some(lm) = &a.landmarks {
        let r = cfg.translator.resolution;
        let ph = nets.landmark_head.store.bind(true);
        let loss = nets.landmark_head.regression_loss(&ph, x, lm, r, r)?;
        require_finite(LANDMARK_FIT, &loss)?;
        nets.step(6, &ph, &loss.backward()?)?;
        report.insert(LANDMARK_FIT, loss.detach());
    }

    // Generators against the updated discriminators and predictors.
    let mut bundle = LossBundle::new();
    let (pd_t, pd_s) = (nets.disc_t.store.bind(false), nets.disc_s.store.bind(false));
    let gan = fooling_loss(&nets.disc_t.forward(&pd_t, &to_t.frames)?)?
        .add(&fooling_loss(&nets.disc_s.forward(&pd_s, &to_s.frames)?)?)?;
    bundle.insert(GAN, gan);

    // Same-domain passes: the identity term and the negatives of each
    // generator's own classifier.
    let same_t = nets.gen_s2t.forward(&pg_s2t, y)?;
    let same_s = nets.gen_t2s.forward(&pg_t2s, x)?;
    bundle.insert(
        CAM,
        cam_loss(&to_t.cam_logit, &same_t.cam_logit)?
            .add(&cam_loss(&to_s.cam_logit, &same_s.cam_logit)?)?,
    );
    let identity = match cfg.identity_form {
        IdentityForm::Symmetric => {
            identity_loss(y, &same_t.frames)?.add(&identity_loss(x, &same_s.frames)?)?
        }
        IdentityForm::Literal => {
            identity_loss(x, &to_t.frames)?.add(&identity_loss(y, &to_s.frames)?)?
        }
    };
    bundle.insert(IDENTITY, identity);

    let (pp_s, pp_t) = (
        nets.predictor_s.store.bind(false),
        nets.predictor_t.store.bind(false),
    );
    let (xs, ys) = (split_frames(x)?, split_frames(y)?);
    let recycle_x = recycle_from_translated(
        &split_frames(&to_t.frames.narrow(0, 0, t)?)?,
        &xs[t],
        |f| Ok(nets.gen_t2s.forward(&pg_t2s, f)?.frames),
        |f| nets.predictor_t.predict(&pp_t, f),
    )?;
    let recycle_y = recycle_from_translated(
        &split_frames(&to_s.frames.narrow(0, 0, t)?)?,
        &ys[t],
        |f| Ok(nets.gen_s2t.forward(&pg_s2t, f)?.frames),
        |f| nets.predictor_s.predict(&pp_s, f),
    )?;
    bundle.insert(RECYCLE, recycle_x.add(&recycle_y)?);

    let needs_cycle = cfg.weights.lambda_lip > 0.0 || blink;
    if needs_cycle {
        let cycled = nets.gen_t2s.forward(&pg_t2s, &to_t.frames)?.frames;
        bundle.insert(LIP, lip_sync_loss(x, &cycled)?);
        if blink {
            let ph = nets.landmark_head.store.bind(false);
            let ear_real = nets.landmark_head.ear(&ph, x)?.detach();
            let ear_cycled = nets.landmark_head.ear(&ph, &cycled)?;
            bundle.insert(BL, stage2_blink_loss(&ear_real, &ear_cycled)?);
        }
    }
    bundle.check_finite()?;
    let objective = stage2_objective(&bundle, &cfg.weights)?;
    require_finite("objective", &objective)?;
    let g = objective.backward()?;
    nets.step(0, &pg_s2t, &g)?;
    nets.step(1, &pg_t2s, &g)?;
    clip_rho(&mut nets.gen_s2t.store);
    clip_rho(&mut nets.gen_t2s.store);

    for (name, v) in bundle.values() {
        report.insert(&name, Tensor::scalar(v));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub losses: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct Stage2Summary {
    pub checkpoints: Vec<PathBuf>,
    pub epochs: Vec<Stage2EpochLog>,
}

const LOG_HEADER: &str = "epoch,loss_name,value\n";

fn prepare_loss_log(path: &Path, keep_through: Option<usize>) -> Result<()> {
    let mut out = String::from(LOG_HEADER);
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

fn append_loss_rows(path: &Path, log: &Stage2EpochLog) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let rows: String = log
        .losses
        .iter()
        .map(|(name, v)| format!("{},{},{:e}\n", log.epoch, name, v))
        .collect();
    f.write_all(rows.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<Stage2EpochLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<Stage2EpochLog> = Vec::new();
    for line in text.lines().skip(1) {
        let bad = || Error::Validation(format!("{}: bad row `{line}`", path.display()));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        let epoch: usize = cols[0].parse().map_err(|_| bad())?;
        let value: f64 = cols[2].parse().map_err(|_| bad())?;
        if out.last().is_none_or(|l| l.epoch != epoch) {
            out.push(Stage2EpochLog {
                epoch,
                losses: BTreeMap::new(),
            });
        }
        out.last_mut()
            .expect("pushed above")
            .losses
            .insert(cols[1].to_string(), value);
    }
    Ok(out)
}

fn state_text(epoch: usize, hash: &str) -> String {
    format!("epoch={epoch}\nconfig_hash={hash}\n")
}

fn parse_state(text: &str) -> Result<(usize, String)> {
    let mut epoch = None;
    let mut hash = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("epoch=") {
            epoch = v.trim().parse().ok();
        } else if let Some(v) = line.strip_prefix("config_hash=") {
            hash = Some(v.trim().to_string());
        }
    }
    match (epoch, hash) {
        (Some(e), Some(h)) => Ok((e, h)),
        _ => Err(Error::Checkpoint(
            "stage-2 state file needs epoch and config_hash".into(),
        )),
    }
}

/// Train for `epochs` more epochs under `out_dir`, as the Stage-1 trainer
/// does: `checkpoints/epoch_NNNN/` plus `losses.csv`.
///
/// Each epoch visits the source windows in a seeded order, pairing each with
/// a target window from an independently shuffled order.
pub fn train(
    dataset: &Stage2Dataset,
    cfg: &Stage2Config,
    out_dir: &Path,
    epochs: usize,
    resume: bool,
) -> Result<Stage2Summary> {
    cfg.validate()?;
    let r = dataset.resolution();
    if r != cfg.translator.resolution {
        bail_validation!(
            "dataset resolution {r} differs from configured {}",
            cfg.translator.resolution
        );
    }
    if cfg.weights.lambda_bl > 0.0 && !dataset.source_has_landmarks() {
        return Err(Error::Precondition(
            "the blink term needs landmarks.txt sidecars for every source clip".into(),
        ));
    }
    let len = cfg.window_len();
    let src_windows = Stage2Dataset::windows(&dataset.source, len);
    let tgt_windows = Stage2Dataset::windows(&dataset.target, len);
    if src_windows.is_empty() || tgt_windows.is_empty() {
        bail_validation!("both domains need a clip of at least {len} frames");
    }
    let hash = cfg.architecture_hash();
    let ckpt_root = out_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_root).map_err(|e| Error::io(&ckpt_root, e))?;
    let log_path = out_dir.join(LOSS_LOG);

    let resumed = if resume {
        latest_checkpoint(&ckpt_root)?
    } else {
        None
    };
    let (mut nets, first) = match &resumed {
        Some((_, dir)) => {
            let text = fs::read_to_string(dir.join(STATE_FILE)).map_err(|e| Error::io(dir, e))?;
            let (epoch, saved) = parse_state(&text)?;
            if saved != hash {
                return Err(Error::Checkpoint(format!(
                    "{}: config hash {saved} does not match configuration {hash}",
                    dir.display()
                )));
            }
            info!("resuming stage 2 from {} (epoch {epoch})", dir.display());
            prepare_loss_log(&log_path, Some(epoch))?;
            (Stage2Networks::load(dir, cfg)?, epoch)
        }
        None => {
            prepare_loss_log(&log_path, None)?;
            (Stage2Networks::new(cfg)?, 0)
        }
    };

    let mut summary = Stage2Summary {
        checkpoints: Vec::new(),
        epochs: Vec::new(),
    };
    for epoch in first..first + epochs {
        let mut rng = seeded_rng(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut src = src_windows.clone();
        src.shuffle(&mut rng);
        let mut tgt = tgt_windows.clone();
        tgt.shuffle(&mut rng);
        if cfg.steps_per_epoch > 0 {
            src = (0..cfg.steps_per_epoch)
                .map(|i| src[i % src.len()])
                .collect();
        }
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (i, &(c, s)) in src.iter().enumerate() {
            let (tc, ts) = tgt[i % tgt.len()];
            let a = dataset.source[c].window(s, len)?;
            let b = dataset.target[tc].window(ts, len)?;
            let report = stage2_train_step(&a, &b, &mut nets, cfg)?;
            for (name, v) in report.values() {
                let e = sums.entry(name).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let log = Stage2EpochLog {
            epoch: epoch + 1,
            losses: sums
                .into_iter()
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect(),
        };
        let dir = ckpt_root.join(epoch_dir_name(epoch + 1));
        let state = state_text(epoch + 1, &hash);
        commit_checkpoint_dir(&dir, |tmp| {
            nets.save(tmp, &hash)?;
            write_atomic(&tmp.join(STATE_FILE), state.as_bytes())
        })?;
        append_loss_rows(&log_path, &log)?;
        info!(
            "stage 2 epoch {}: {}",
            log.epoch,
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
