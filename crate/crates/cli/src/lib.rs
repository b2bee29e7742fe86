//! Argument definitions and command dispatch for the `au2av` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use au2av_core::config::Settings;
use au2av_core::pipeline::{
    evaluate_dirs, generate_to_dir, prepare_dataset, train_stage1, train_stage2, GenerateOptions,
    PipelineConfig,
};
use au2av_core::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const CLIP_REPORT_DIR: &str = "clip_reports";

#[derive(Debug, Parser)]
#[command(
    name = "au2av",
    version,
    about = "Talking-face generation from audio and one image, with translation to animation"
)]
pub struct Cli {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long, global = true, env = "AU2AV_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed of both stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw clip directories into the training layout.
    Prepare {
        /// Directory with one subdirectory per raw clip.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the audio-to-face generator.
    TrainStage1(TrainArgs),
    /// Train the face-to-animation translators.
    TrainStage2(TrainArgs),
    /// Generate a clip from an audio file and one face image.
    Generate(GenerateArgs),
    /// Score generated clips against references.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Report file; defaults to `report.json` in the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run root; the stage writes to `stage1/` or `stage2/` below it.
    /// Defaults to `paths.runs` of the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the latest checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Overrides the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Stage-1 checkpoint or run directory; defaults to `<paths.runs>/stage1`.
    #[arg(long)]
    pub stage1: Option<PathBuf>,
    /// Stage-2 checkpoint or run directory; defaults to `<paths.runs>/stage2`.
    #[arg(long)]
    pub stage2: Option<PathBuf>,
    /// Also write the human-domain clip.
    #[arg(long)]
    pub keep_intermediate: bool,
    /// Stop after the human-domain clip.
    #[arg(long)]
    pub human_only: bool,
    /// Use the trained generator without fine-tuning on the image.
    #[arg(long)]
    pub skip_adapt: bool,
    #[arg(long)]
    pub adapt_epochs: Option<usize>,
}

pub fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_deref().ok_or_else(|| {
        Error::Config("no configuration: pass --config or set AU2AV_CONFIG".into())
    })?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn stage_dir(cfg: &PipelineConfig, out: &Option<PathBuf>, stage: &str) -> PathBuf {
    out.as_deref().unwrap_or(&cfg.runs_dir).join(stage)
}

/// Run one command; the caller reports errors.
pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Prepare { input, out } => {
            let s = prepare_dataset(input, out, &cfg)?;
            println!(
                "prepared {} clips, skipped {}",
                s.prepared.len(),
                s.skipped.len()
            );
            for (name, reason) in &s.skipped {
                println!("skipped {name}: {reason}");
            }
        }
        Command::TrainStage1(args) => {
            if let Some(e) = args.epochs {
                cfg.stage1_epochs = e;
            }
            cfg.validate()?;
            let dir = stage_dir(&cfg, &args.out, "stage1");
            let s = train_stage1(&cfg, &dir, args.resume)?;
            report_epochs(&dir, s.epochs.iter().map(|e| (e.epoch, &e.losses)));
        }
        Command::TrainStage2(args) => {
            if let Some(e) = args.epochs {
                cfg.stage2_epochs = e;
            }
            cfg.validate()?;
            let dir = stage_dir(&cfg, &args.out, "stage2");
            let s = train_stage2(&cfg, &dir, args.resume)?;
            report_epochs(&dir, s.epochs.iter().map(|e| (e.epoch, &e.losses)));
        }
        Command::Generate(args) => {
            if let Some(e) = args.adapt_epochs {
                cfg.adapt_epochs = e;
            }
            cfg.validate()?;
            let opts = GenerateOptions {
                stage1_checkpoint: args.stage1.clone().unwrap_or_else(|| cfg.stage1_dir()),
                stage2_checkpoint: if args.human_only {
                    None
                } else {
                    Some(args.stage2.clone().unwrap_or_else(|| cfg.stage2_dir()))
                },
                skip_adapt: args.skip_adapt,
                human_only: args.human_only,
                keep_intermediate: args.keep_intermediate,
            };
            let out = generate_to_dir(&args.audio, &args.image, &args.out, &cfg, &opts)?;
            println!(
                "wrote {} frames to {}{}",
                out.human.len(),
                args.out.display(),
                if out.animated.is_some() {
                    " (animated)"
                } else {
                    " (human)"
                }
            );
        }
        Command::Evaluate {
            generated,
            reference,
            out,
        } => {
            let ev = evaluate_dirs(generated, reference, &cfg)?;
            let path = out.clone().unwrap_or_else(|| PathBuf::from(REPORT_FILE));
            ev.summary.save(&path)?;
            if ev.clips.len() > 1 {
                let dir = path
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(CLIP_REPORT_DIR);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (name, r) in &ev.clips {
                    r.save(&dir.join(format!("{name}.json")))?;
                }
            }
            print!("{}", ev.summary.table());
            info!("report written to {}", path.display());
        }
    }
    Ok(())
}

fn report_epochs<'a>(dir: &Path, epochs: impl Iterator<Item = (usize, &'a BTreeMap<String, f64>)>) {
    for (epoch, losses) in epochs {
        let parts: Vec<String> = losses.iter().map(|(k, v)| format!("{k}={v:.5}")).collect();
        println!("epoch {epoch}: {}", parts.join(" "));
    }
    println!("checkpoints under {}", dir.display());
}

/// `error[<kind>]: <message>` on one line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error[{}]: {msg}", e.kind())
}
