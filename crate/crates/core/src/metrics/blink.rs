//! Blink rate from a per-frame EAR series.

use crate::error::{bail_validation, Result};

pub trait BlinkDetector {
    fn name(&self) -> &str;
    fn count(&self, ear: &[f64]) -> usize;
}

/// A blink is a run of at least `consecutive_min` frames with EAR below
/// `threshold` that is followed by a frame at or above it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdBlinkDetector {
    pub threshold: f64,
    pub consecutive_min: usize,
}

impl Default for ThresholdBlinkDetector {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            consecutive_min: 2,
        }
    }
}

impl BlinkDetector for ThresholdBlinkDetector {
    fn name(&self) -> &str {
        "threshold"
    }

    fn count(&self, ear: &[f64]) -> usize {
        let mut blinks = 0;
        let mut run = 0;
        for &e in ear {
            if e < self.threshold {
                run += 1;
            } else {
                if run >= self.consecutive_min {
                    blinks += 1;
                }
                run = 0;
            }
        }
        blinks
    }
}

/// Blinks per second of video.
pub fn blinks_per_sec(ear: &[f64], fps: f64, detector: &dyn BlinkDetector) -> Result<f64> {
    if ear.len() < 3 {
        bail_validation!("blink rate needs at least 3 frames, got {}", ear.len());
    }
    if !(fps.is_finite() && fps > 0.0) {
        bail_validation!("fps must be positive, got {fps}");
    }
    Ok(detector.count(ear) as f64 * fps / ear.len() as f64)
}
