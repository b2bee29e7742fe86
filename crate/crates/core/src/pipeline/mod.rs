//! End-to-end orchestration behind the command-line tool: configuration,
//! dataset preparation, training, generation and evaluation.

pub mod config;
pub mod evaluate;
pub mod generate;
pub mod prepare;
pub mod train;

pub use config::{PipelineConfig, ProviderNames};
pub use evaluate::{evaluate_dirs, Evaluation};
pub use generate::{
    generate, generate_to_dir, resolve_checkpoint, GenerateOptions, GenerateOutput,
};
pub use prepare::{prepare_dataset, PrepareSummary};
pub use train::{train_stage1, train_stage2};
