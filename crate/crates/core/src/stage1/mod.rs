//! Audio-driven talking-face generation: networks, losses, curriculum and
//! training loop.

pub mod adapt;
pub mod curriculum;
pub mod data;
pub mod discriminator;
pub mod encoder;
pub mod generator;
pub mod landmark_head;
pub mod losses;
pub mod spade;
pub mod sync;
pub mod trainer;

pub use curriculum::{stabilization_check, CurriculumState, StabilizationSettings};
pub use discriminator::{DiscriminatorConfig, DiscriminatorOutput, MultiScaleDiscriminator};
pub use encoder::{SpeechEmbedding, SpeechEncoder, SpeechEncoderConfig};
pub use generator::{GeneratorConfig, SpadeGenerator};
pub use losses::{LossName, Phase, Stage1LossWeights};
pub use sync::{SyncConfig, SyncDiscriminator};
