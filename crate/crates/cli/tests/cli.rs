use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use au2av_core::media::{list_frame_files, CANONICAL_FPS, CANONICAL_SAMPLE_RATE};
use au2av_core::metrics::MetricReport;
use au2av_core::toy::{
    render_face, speech_audio, speech_envelope, write_toy_dataset, FaceState, ToyDomain,
};

fn au2av(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_au2av"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AU2AV_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "command failed: {stderr}");
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn single_error_line(out: &Output, kind: &str) {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(
        lines[0].starts_with(&format!("error[{kind}]: ")),
        "{stderr}"
    );
}

const CONFIG: &str = "\
preset = toy
paths.human = human
paths.anime = anime
paths.runs = runs
train.stage1_epochs = 2
train.stage2_epochs = 2
stage1.steps_per_epoch = 2
stage2.steps_per_epoch = 2
adapt.epochs = 2
seed = 4
";

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("toy.cfg"), CONFIG).unwrap();
    write_toy_dataset(&root.join("raw_human"), ToyDomain::Human, 2, 8, 32, 1).unwrap();
    write_toy_dataset(&root.join("raw_anime"), ToyDomain::Anime, 2, 8, 32, 2).unwrap();

    let out = ok(&au2av(
        root,
        &[
            "prepare",
            "--config",
            "toy.cfg",
            "--input",
            "raw_human",
            "--out",
            "human",
        ],
    ));
    assert!(out.contains("prepared 2 clips"));
    ok(&au2av(
        root,
        &[
            "prepare",
            "--config",
            "toy.cfg",
            "--input",
            "raw_anime",
            "--out",
            "anime",
        ],
    ));

    let out = ok(&au2av(root, &["train-stage1", "--config", "toy.cfg"]));
    assert!(out.contains("epoch 2:"), "{out}");
    ok(&au2av(
        root,
        &[
            "train-stage1",
            "--config",
            "toy.cfg",
            "--resume",
            "--epochs",
            "1",
        ],
    ));
    for e in ["epoch_0001", "epoch_0002", "epoch_0003"] {
        assert!(root.join("runs/stage1/checkpoints").join(e).is_dir(), "{e}");
    }
    ok(&au2av(root, &["train-stage2", "--config", "toy.cfg"]));
    assert!(root.join("runs/stage2/checkpoints/epoch_0002").is_dir());
    assert!(root.join("runs/stage2/losses.csv").is_file());

    let envelope = speech_envelope(3, 25);
    speech_audio(3, &envelope, CANONICAL_FPS, CANONICAL_SAMPLE_RATE)
        .unwrap()
        .save_wav(&root.join("speech.wav"))
        .unwrap();
    let state = FaceState {
        mouth: 0.1,
        eyes: 1.0,
        sway: 0.0,
    };
    render_face(ToyDomain::Human, 7, 40, state)
        .0
        .save_png(&root.join("face.png"))
        .unwrap();
    let gen = [
        "generate",
        "--config",
        "toy.cfg",
        "--audio",
        "speech.wav",
        "--image",
        "face.png",
    ];
    ok(&au2av(
        root,
        &[&gen[..], &["--out", "gen_a", "--keep-intermediate"]].concat(),
    ));
    ok(&au2av(
        root,
        &[&gen[..], &["--out", "gen_b", "--keep-intermediate"]].concat(),
    ));
    for sub in ["human", "animated"] {
        let a = list_frame_files(&root.join("gen_a").join(sub)).unwrap();
        let b = list_frame_files(&root.join("gen_b").join(sub)).unwrap();
        assert_eq!(a.len(), 25);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
    ok(&au2av(
        root,
        &[
            &gen[..],
            &["--out", "gen_h", "--human-only", "--skip-adapt"],
        ]
        .concat(),
    ));
    assert!(root.join("gen_h/human").is_dir() && !root.join("gen_h/animated").exists());

    let table = ok(&au2av(
        root,
        &[
            "evaluate",
            "--config",
            "toy.cfg",
            "--generated",
            "human",
            "--reference",
            "human",
            "--out",
            "self.json",
        ],
    ));
    assert!(table.starts_with("metric"));
    let report = MetricReport::load(&root.join("self.json")).unwrap();
    assert_eq!(report.get("psnr").unwrap().value, Some(f64::INFINITY));
    assert!((report.get("ssim").unwrap().value.unwrap() - 1.0).abs() < 1e-12);
    assert!(root.join("clip_reports/clip_000.json").is_file());

    // Generated clips lack a transcript, so WER is skipped, never dropped.
    ok(&au2av(
        root,
        &[
            "evaluate",
            "--config",
            "toy.cfg",
            "--generated",
            "gen_a/human",
            "--reference",
            "gen_b/human",
            "--out",
            "g.json",
        ],
    ));
    let report = MetricReport::load(&root.join("g.json")).unwrap();
    assert!(report.get("wer").unwrap().skipped.is_some());
}

#[test]
fn failures_print_one_prefixed_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    single_error_line(&au2av(root, &["train-stage1"]), "config");
    fs::write(root.join("bad.cfg"), "stage1.lambda_pl = -1\n").unwrap();
    let out = au2av(root, &["train-stage1", "--config", "bad.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
    fs::write(root.join("unknown.cfg"), "stage1.bogus = 1\n").unwrap();
    single_error_line(
        &au2av(
            root,
            &[
                "generate",
                "--config",
                "unknown.cfg",
                "--audio",
                "a",
                "--image",
                "b",
                "--out",
                "o",
            ],
        ),
        "config",
    );
    fs::write(root.join("ok.cfg"), "preset = toy\n").unwrap();
    fs::create_dir_all(root.join("empty")).unwrap();
    single_error_line(
        &au2av(
            root,
            &[
                "prepare", "--config", "ok.cfg", "--input", "empty", "--out", "p",
            ],
        ),
        "validation",
    );
    single_error_line(
        &au2av(
            root,
            &[
                "generate",
                "--config",
                "ok.cfg",
                "--audio",
                "missing.wav",
                "--image",
                "b.png",
                "--out",
                "o",
                "--stage1",
                "nowhere",
            ],
        ),
        "io",
    );
}

#[test]
fn config_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("env.cfg"), "preset = toy\n").unwrap();
    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_au2av"))
        .args(["prepare", "--input", "empty", "--out", "p"])
        .current_dir(dir.path())
        .env("AU2AV_CONFIG", dir.path().join("env.cfg"))
        .output()
        .unwrap();
    // Reaches the data check, so the configuration was found.
    single_error_line(&out, "validation");
}
