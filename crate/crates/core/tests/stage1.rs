use std::collections::BTreeMap;

use au2av_core::autograd::Tensor;
use au2av_core::checkpoint::read_archive;
use au2av_core::media::SidecarPoseProvider;
use au2av_core::providers::{feature_provider_by_name, IdentityFeatures};
use au2av_core::stage1::adapt::one_shot_adapt;
use au2av_core::stage1::curriculum::{CurriculumState, StabilizationSettings};
use au2av_core::stage1::data::{Stage1Clip, Stage1Dataset};
use au2av_core::stage1::losses::{LossName, Phase};
use au2av_core::stage1::trainer::{
    read_loss_log, train, train_step, Stage1Config, Stage1Networks, CHECKPOINT_DIR, LOSS_LOG,
    STATE_FILE,
};
use au2av_core::toy::{toy_clip, ToyDomain};
use au2av_core::Error;

const RES: usize = 32;

fn clip(seed: u64, frames: usize) -> Stage1Clip {
    let toy = toy_clip(ToyDomain::Human, seed, frames, RES).unwrap();
    let pose = SidecarPoseProvider::new(toy.poses.clone());
    Stage1Clip::from_clip("c", &toy.clip, Some(toy.landmarks.clone()), &pose, RES).unwrap()
}

fn config() -> Stage1Config {
    Stage1Config {
        steps_per_epoch: 2,
        sync_pretrain_steps: 3,
        ..Stage1Config::toy(RES)
    }
}

fn state(phase: Phase) -> CurriculumState {
    let mut s = CurriculumState::new(StabilizationSettings::default());
    s.advance_to(phase).unwrap();
    s
}

#[test]
fn phase_one_needs_no_landmarks() {
    let cfg = config();
    let mut nets = Stage1Networks::new(&cfg).unwrap();
    let batch = clip(1, 5).window(0, 5).unwrap().without_landmarks();
    let report = train_step(
        &batch,
        &mut nets,
        &cfg,
        &state(Phase::One),
        &IdentityFeatures,
    )
    .unwrap();
    for name in ["GAN", "FM", "PL", "D_frame"] {
        assert!(
            report.get(name).unwrap().to_scalar().unwrap().is_finite(),
            "{name}"
        );
    }
    assert!(report.get("BL").is_none() && report.get("TAL").is_none());
    assert_eq!(
        (
            nets.opt_g.step,
            nets.opt_frame_d.step,
            nets.opt_temporal_d.step
        ),
        (1, 1, 0)
    );
}

#[test]
fn phase_three_without_landmarks_is_rejected() {
    let cfg = config();
    let mut nets = Stage1Networks::new(&cfg).unwrap();
    let before = nets.generator.store.flat_values();
    let batch = clip(1, 5).window(0, 5).unwrap().without_landmarks();
    let err = train_step(
        &batch,
        &mut nets,
        &cfg,
        &state(Phase::Three),
        &IdentityFeatures,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Precondition(_)), "{err}");
    assert_eq!(nets.generator.store.flat_values(), before);
}

#[test]
fn phase_three_reports_every_loss() {
    let cfg = config();
    let mut nets = Stage1Networks::new(&cfg).unwrap();
    let batch = clip(2, 5).window(0, 5).unwrap();
    let report = train_step(
        &batch,
        &mut nets,
        &cfg,
        &state(Phase::Three),
        &IdentityFeatures,
    )
    .unwrap();
    for n in LossName::ALL {
        assert!(
            report
                .get(n.as_str())
                .unwrap()
                .to_scalar()
                .unwrap()
                .is_finite(),
            "{}",
            n.as_str()
        );
    }
}

#[test]
fn non_finite_loss_is_named() {
    let cfg = config();
    let mut nets = Stage1Networks::new(&cfg).unwrap();
    let mut batch = clip(1, 5).window(0, 5).unwrap();
    let t = batch.sync_audio.shape().to_vec();
    batch.sync_audio = Tensor::full(f64::NAN, &t);
    let err = train_step(
        &batch,
        &mut nets,
        &cfg,
        &state(Phase::Two),
        &IdentityFeatures,
    )
    .unwrap_err();
    match err {
        Error::NonFinite { loss, .. } => assert_eq!(loss, "CL"),
        other => panic!("unexpected {other}"),
    }
}

fn dataset() -> Stage1Dataset {
    Stage1Dataset::new(vec![clip(11, 7), clip(12, 6)]).unwrap()
}

#[test]
fn checkpoints_resume_and_determinism() {
    let cfg = config();
    let ds = dataset();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_a = train(&ds, &cfg, a.path(), 3, false).unwrap();
    assert_eq!(run_a.checkpoints.len(), 3);
    for (i, c) in run_a.checkpoints.iter().enumerate() {
        assert!(c.ends_with(format!("epoch_{:04}", i + 1)));
        assert!(c.join(STATE_FILE).is_file() && c.join("generator.bin").is_file());
        for net in ["frame_d", "temporal_d", "sync_d"] {
            assert!(c.join(format!("{net}.bin")).is_file());
        }
    }
    assert!(!a
        .path()
        .join(CHECKPOINT_DIR)
        .join("epoch_0003.partial")
        .exists());

    // Same seed and config: bit-identical loss logs.
    train(&ds, &cfg, b.path(), 3, false).unwrap();
    let log_a = std::fs::read(a.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log_a, std::fs::read(b.path().join(LOSS_LOG)).unwrap());

    // Resume from epoch 2 reproduces epoch 3.
    std::fs::remove_dir_all(b.path().join(CHECKPOINT_DIR).join("epoch_0003")).unwrap();
    let resumed = train(&ds, &cfg, b.path(), 1, true).unwrap();
    assert_eq!(resumed.epochs[0].epoch, 3);
    assert_eq!(resumed.epochs[0], run_a.epochs[2]);
    assert_eq!(log_a, std::fs::read(b.path().join(LOSS_LOG)).unwrap());
    let ga = read_archive(&run_a.checkpoints[2].join("generator.bin")).unwrap();
    let gb = read_archive(&resumed.checkpoints[0].join("generator.bin")).unwrap();
    assert_eq!(ga, gb);
}

#[test]
fn recorded_phases_replay_from_loss_history() {
    // Loose stabilization so that phase changes happen within a few epochs.
    let cfg = Stage1Config {
        stabilization: StabilizationSettings {
            epsilon_fraction: 10.0,
            patience: 2,
        },
        ..config()
    };
    let out = tempfile::tempdir().unwrap();
    let run = train(&dataset(), &cfg, out.path(), 5, false).unwrap();
    let log = read_loss_log(&out.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log, run.epochs);
    let mut replay = CurriculumState::new(cfg.stabilization.clone());
    let mut phases = Vec::new();
    for (epoch, ckpt) in log.iter().zip(&run.checkpoints) {
        assert_eq!(epoch.phase, replay.phase);
        let losses: BTreeMap<LossName, f64> = epoch
            .losses
            .iter()
            .filter_map(|(k, &v)| LossName::parse(k).map(|n| (n, v)))
            .collect();
        replay.observe_epoch(&losses);
        let text = std::fs::read_to_string(ckpt.join(STATE_FILE)).unwrap();
        let saved = CurriculumState::parse(&text).unwrap();
        assert_eq!(saved.phase, replay.phase);
        phases.push(saved.phase);
    }
    assert!(phases.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(phases.last(), Some(&Phase::Three));
}

#[test]
fn adaptation_copies_and_counts_passes() {
    let cfg = config();
    let nets = Stage1Networks::new(&cfg).unwrap();
    let c = clip(5, 5);
    let batch = c.window(0, 5).unwrap();
    let provider = feature_provider_by_name("frozen-conv", 1).unwrap();
    let before = nets.generator.store.flat_values();
    let (same, r0) = one_shot_adapt(
        &nets.generator,
        &batch.identity,
        &batch.mfcc,
        provider.as_ref(),
        0,
        1e-4,
    )
    .unwrap();
    assert_eq!(same.store.flat_values(), before);
    assert_eq!(r0.generator_updates, 0);
    let (adapted, r5) = one_shot_adapt(
        &nets.generator,
        &batch.identity,
        &batch.mfcc,
        provider.as_ref(),
        5,
        1e-4,
    )
    .unwrap();
    assert_eq!(
        (
            r5.generator_updates,
            r5.discriminator_updates,
            r5.losses.len()
        ),
        (5, 0, 6)
    );
    assert!(r5.losses[5] <= r5.losses[0], "{:?}", r5.losses);
    assert_eq!(nets.generator.store.flat_values(), before);
    assert_ne!(adapted.store.flat_values(), before);
}
