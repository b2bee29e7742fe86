use au2av_core::autograd::Tensor;
use au2av_core::checkpoint::read_archive;
use au2av_core::stage2::adalin::RHO_SUFFIX;
use au2av_core::stage2::data::split_frames;
use au2av_core::stage2::losses::{identity_loss, lip_sync_loss, recycle_loss, Stage2LossWeights};
use au2av_core::stage2::trainer::{read_loss_log, train, LOSS_LOG, NETWORK_FILES};
use au2av_core::stage2::{
    stage2_train_step, Stage2Clip, Stage2Config, Stage2Dataset, Stage2Networks,
};
use au2av_core::toy::{toy_clip, ToyDomain};
use au2av_core::Error;

const RES: usize = 16;

fn config() -> Stage2Config {
    let mut cfg = Stage2Config::toy(RES);
    cfg.translator.base_channels = 2;
    cfg.steps_per_epoch = 2;
    cfg
}

fn clip(domain: ToyDomain, seed: u64, frames: usize, landmarks: bool) -> Stage2Clip {
    let toy = toy_clip(domain, seed, frames, RES).unwrap();
    let lm = landmarks.then(|| toy.landmarks.clone());
    Stage2Clip::new(&format!("clip_{seed}"), toy.clip.frames(), lm, RES).unwrap()
}

fn rho_values(nets: &Stage2Networks) -> Vec<f64> {
    [&nets.gen_s2t.store, &nets.gen_t2s.store]
        .iter()
        .flat_map(|s| s.entries().iter().filter(|e| e.name.ends_with(RHO_SUFFIX)))
        .flat_map(|e| e.value.clone())
        .collect()
}

#[test]
fn rho_stays_clipped_under_aggressive_updates() {
    let cfg = Stage2Config {
        learning_rate: 0.3,
        ..config()
    };
    let mut nets = Stage2Networks::new(&cfg).unwrap();
    assert!(!rho_values(&nets).is_empty());
    let a = clip(ToyDomain::Human, 1, 12, true);
    let b = clip(ToyDomain::Anime, 2, 12, false);
    let mut moved = false;
    for step in 0..100 {
        let s = step % 10;
        let res = stage2_train_step(
            &a.window(s, 3).unwrap(),
            &b.window(9 - s, 3).unwrap(),
            &mut nets,
            &cfg,
        );
        match res {
            Ok(_) | Err(Error::NonFinite { .. }) => {}
            Err(e) => panic!("{e}"),
        }
        let rho = rho_values(&nets);
        assert!(
            rho.iter().all(|r| (0.0..=1.0).contains(r)),
            "step {step}: {rho:?}"
        );
        moved |=
            rho.iter().any(|&r| r == 0.0 || r == 1.0) && rho.iter().any(|&r| r != 0.9 && r != 0.0);
    }
    assert!(moved, "updates never pushed rho against a bound");
}

#[test]
fn recycle_gradient_reaches_all_three_networks() {
    let cfg = config();
    let nets = Stage2Networks::new(&cfg).unwrap();
    let frames = split_frames(&clip(ToyDomain::Human, 3, 3, false).frames).unwrap();
    let (p1, p2, pp) = (
        nets.gen_s2t.store.bind(true),
        nets.gen_t2s.store.bind(true),
        nets.predictor_t.store.bind(true),
    );
    let loss = recycle_loss(
        &frames,
        |f| Ok(nets.gen_s2t.forward(&p1, f)?.frames),
        |f| Ok(nets.gen_t2s.forward(&p2, f)?.frames),
        |f| nets.predictor_t.predict(&pp, f),
    )
    .unwrap();
    let g = loss.backward().unwrap();
    for (name, p) in [("G_s2t", &p1), ("G_t2s", &p2), ("P_t", &pp)] {
        let norm: f64 = p.grads(&g).iter().flatten().map(|v| v * v).sum();
        assert!(norm > 0.0, "{name} received no gradient");
    }
}

#[test]
fn blink_term_requires_landmarks() {
    let cfg = config();
    let mut nets = Stage2Networks::new(&cfg).unwrap();
    let before = nets.gen_s2t.store.flat_values();
    let a = clip(ToyDomain::Human, 1, 3, false).window(0, 3).unwrap();
    let b = clip(ToyDomain::Anime, 2, 3, false).window(0, 3).unwrap();
    let err = stage2_train_step(&a, &b, &mut nets, &cfg).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)), "{err}");
    assert_eq!(nets.gen_s2t.store.flat_values(), before);

    let no_blink = Stage2Config {
        weights: Stage2LossWeights {
            lambda_bl: 0.0,
            ..Stage2LossWeights::default()
        },
        ..cfg
    };
    let report = stage2_train_step(&a, &b, &mut nets, &no_blink).unwrap();
    assert!(report.get("BL").is_none());
    for name in [
        "GAN", "CAM", "RECYCLE", "IDENTITY", "LIP", "D_t", "D_s", "P_s", "P_t",
    ] {
        assert!(
            report.get(name).unwrap().to_scalar().unwrap().is_finite(),
            "{name}"
        );
    }
    assert!(nets.optimizers[..6].iter().all(|o| o.step == 1));
    assert_eq!(nets.optimizers[6].step, 0);
}

#[test]
fn window_length_and_non_finite_input_are_reported() {
    let cfg = config();
    let mut nets = Stage2Networks::new(&cfg).unwrap();
    let a = clip(ToyDomain::Human, 1, 4, true);
    let b = clip(ToyDomain::Anime, 2, 4, false);
    let err = stage2_train_step(
        &a.window(0, 4).unwrap(),
        &b.window(0, 4).unwrap(),
        &mut nets,
        &cfg,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
    let mut bad = b.window(0, 3).unwrap();
    let mut data = bad.frames.to_vec();
    data[5] = f64::NAN;
    bad.frames = Tensor::new(data, bad.frames.shape()).unwrap();
    let err = stage2_train_step(&a.window(0, 3).unwrap(), &bad, &mut nets, &cfg).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
}

#[test]
fn training_checkpoints_resume_deterministically() {
    let cfg = config();
    let data = Stage2Dataset::new(
        vec![
            clip(ToyDomain::Human, 1, 4, true),
            clip(ToyDomain::Human, 5, 3, true),
        ],
        vec![clip(ToyDomain::Anime, 2, 5, false)],
    )
    .unwrap();
    let full = tempfile::tempdir().unwrap();
    let summary = train(&data, &cfg, full.path(), 3, false).unwrap();
    assert_eq!(summary.checkpoints.len(), 3);
    for name in NETWORK_FILES {
        assert!(
            summary.checkpoints[2].join(format!("{name}.bin")).is_file(),
            "{name}"
        );
    }
    let log = read_loss_log(&full.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log.len(), 3);
    assert!(log[0].losses.contains_key("RECYCLE"));

    let part = tempfile::tempdir().unwrap();
    train(&data, &cfg, part.path(), 2, false).unwrap();
    let resumed = train(&data, &cfg, part.path(), 1, true).unwrap();
    assert_eq!(resumed.epochs[0].epoch, 3);
    assert_eq!(
        std::fs::read_to_string(full.path().join(LOSS_LOG)).unwrap(),
        std::fs::read_to_string(part.path().join(LOSS_LOG)).unwrap()
    );
    let a = read_archive(&summary.checkpoints[2].join("gen_s2t.bin")).unwrap();
    let b = read_archive(&resumed.checkpoints[0].join("gen_s2t.bin")).unwrap();
    assert_eq!(a.tensors, b.tensors);

    let other = Stage2Config {
        critic_channels: 8,
        ..cfg
    };
    assert!(matches!(
        train(&data, &other, part.path(), 1, true),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn training_rejects_missing_source_landmarks() {
    let data = Stage2Dataset::new(
        vec![clip(ToyDomain::Human, 1, 4, false)],
        vec![clip(ToyDomain::Anime, 2, 4, false)],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        train(&data, &config(), dir.path(), 1, false),
        Err(Error::Precondition(_))
    ));
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]

    // Both sides summed over the same pixels and divided by the full count,
    // the mouth-region error never exceeds the whole-frame round-trip error.
    // Even heights only: odd ones replicate the bottom row.
    #[test]
    fn lip_term_is_bounded_by_full_cycle_error(
        half in 1usize..5,
        w in 1usize..6,
        seed in 0u64..1000,
    ) {
        use rand::Rng;
        let h = 2 * half;
        let mut rng = au2av_core::autograd::seeded_rng(seed);
        let n = 3 * h * w;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(x, &[1, 3, h, w]).unwrap();
        let y = Tensor::new(y, &[1, 3, h, w]).unwrap();
                let lip = lip_sync_loss(&x, &y).unwrap().to_scalar().unwrap()
            * 0.5;
        let full = identity_loss(&x, &y).unwrap().to_scalar().unwrap();
        proptest::prop_assert!(lip <= full + 1e-12, "{lip} > {full}");
    }
}
