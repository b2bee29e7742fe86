//! Quantitative evaluation: image quality, distribution distance, identity
//! preservation, blink rate and lip-reading error.

pub mod blink;
pub mod identity;
pub mod kid;
pub mod quality;
pub mod report;
pub mod wer;

pub use blink::{blinks_per_sec, BlinkDetector, ThresholdBlinkDetector};
pub use identity::{
    acd, acd_from_embeddings, AcdResult, ACD_COSINE_THRESHOLD, ACD_EUCLIDEAN_THRESHOLD,
};
pub use kid::{kid, mmd2_unbiased, KidEstimate};
pub use quality::{cpbd, psnr, psnr_values, ssim};
pub use report::{evaluate_clip, EvalProviders, MetricEntry, MetricReport, METRIC_ORDER};
pub use wer::{edit_distance, wer};
