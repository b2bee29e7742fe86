//! Training entry points reading the prepared dataset named by the config.

use std::path::Path;

use super::config::PipelineConfig;
use crate::config::Settings;
use crate::error::{Error, Result};
use crate::stage1::data::Stage1Dataset;
use crate::stage1::trainer::{train, TrainSummary};
use crate::stage2::trainer::{train as train2, Stage2Summary};
use crate::stage2::Stage2Dataset;

pub const CONFIG_COPY: &str = "config.txt";

fn record_config(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_COPY);
    std::fs::write(&path, cfg.render()).map_err(|e| Error::io(&path, e))
}

/// Train Stage 1 into `out_dir` for `cfg.stage1_epochs` epochs.
pub fn train_stage1(cfg: &PipelineConfig, out_dir: &Path, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let dataset = Stage1Dataset::load(&cfg.human_dir, cfg.stage1.generator.resolution)?;
    record_config(out_dir, cfg)?;
    train(&dataset, &cfg.stage1, out_dir, cfg.stage1_epochs, resume)
}

/// Train Stage 2 into `out_dir` for `cfg.stage2_epochs` epochs.
pub fn train_stage2(cfg: &PipelineConfig, out_dir: &Path, resume: bool) -> Result<Stage2Summary> {
    cfg.validate()?;
    let dataset = Stage2Dataset::load(
        &cfg.human_dir,
        &cfg.anime_dir,
        cfg.stage2.translator.resolution,
    )?;
    record_config(out_dir, cfg)?;
    train2(&dataset, &cfg.stage2, out_dir, cfg.stage2_epochs, resume)
}
