pub mod autograd;
pub mod bundle;
pub mod checkpoint;
pub mod config;
mod error;
pub mod landmarks;
pub mod media;
pub mod metrics;
pub mod pipeline;
pub mod providers;
pub mod stage1;
pub mod stage2;
pub mod toy;

pub use bundle::LossBundle;
pub use error::{Error, Result};
