//! Stage 2: unpaired human-to-anime translation with temporal predictors.

pub mod adalin;
pub mod cam;
pub mod data;
pub mod discriminator;
pub mod generator;
pub mod losses;
pub mod predictor;
pub mod trainer;

pub use adalin::{adalin, clip_rho, AdaLin};
pub use cam::{CamAttention, CamOutput};
pub use data::{Stage2Clip, Stage2Dataset, Stage2Window};
pub use discriminator::{Critic, CriticConfig, CriticOutput};
pub use generator::{TranslationOutput, Translator, TranslatorConfig};
pub use losses::{stage2_objective, Stage2LossWeights};
pub use predictor::{Predictor, PredictorConfig};
pub use trainer::{stage2_train_step, IdentityForm, Stage2Config, Stage2Networks};
