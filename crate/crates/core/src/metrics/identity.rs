//! Identity preservation: embedding distance between generated frames and a
//! reference image.

use crate::error::{bail_shape, Error, Result};
use crate::media::Image;
use crate::providers::EmbeddingProvider;

pub const ACD_COSINE_THRESHOLD: f64 = 0.02;
pub const ACD_EUCLIDEAN_THRESHOLD: f64 = 0.20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcdResult {
    pub cosine: f64,
    pub euclidean: f64,
}

impl AcdResult {
    pub fn cosine_pass(&self) -> bool {
        self.cosine <= ACD_COSINE_THRESHOLD
    }

    pub fn euclidean_pass(&self) -> bool {
        self.euclidean <= ACD_EUCLIDEAN_THRESHOLD
    }
}

/// `1 - cos(a, b)`; zero vectors are at distance 1 from anything but
/// another zero vector.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => 1.0 - dot / (na * nb),
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean distances of each frame embedding to the reference embedding.
pub fn acd_from_embeddings(frames: &[Vec<f64>], reference: &[f64]) -> Result<AcdResult> {
    if frames.is_empty() {
        bail_shape!("no frame embeddings");
    }
    if frames.iter().any(|f| f.len() != reference.len()) {
        bail_shape!(
            "frame embeddings differ in length from the reference's {}",
            reference.len()
        );
    }
    let n = frames.len() as f64;
    Ok(AcdResult {
        cosine: frames
            .iter()
            .map(|f| cosine_distance(f, reference))
            .sum::<f64>()
            / n,
        euclidean: frames
            .iter()
            .map(|f| euclidean_distance(f, reference))
            .sum::<f64>()
            / n,
    })
}

/// Embed every frame and the reference; fails listing every frame the
/// provider could not embed.
pub fn acd(
    frames: &[Image],
    reference: &Image,
    provider: &dyn EmbeddingProvider,
) -> Result<AcdResult> {
    let reference = provider
        .embed(reference)
        .map_err(|e| Error::Provider(format!("{}: reference image: {e}", provider.name())))?;
    let mut embeddings = Vec::with_capacity(frames.len());
    let mut failed = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        match provider.embed(f) {
            Ok(e) => embeddings.push(e),
            Err(_) => failed.push(i),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Provider(format!(
            "{}: failed on frames {failed:?}",
            provider.name()
        )));
    }
    acd_from_embeddings(&embeddings, &reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ThumbnailEmbedding;

    #[test]
    fn forced_values() {
        let r = acd_from_embeddings(&[vec![0.0, 1.0]], &[1.0, 0.0]).unwrap();
        assert!((r.cosine - 1.0).abs() < 1e-15);
        assert!((r.euclidean - 2f64.sqrt()).abs() < 1e-15);
        assert!(!r.cosine_pass() && !r.euclidean_pass());
        let same = acd_from_embeddings(&vec![vec![0.2, 0.5]; 3], &[0.2, 0.5]).unwrap();
        assert!(same.cosine.abs() < 1e-15 && same.euclidean == 0.0);
        assert!(same.cosine_pass() && same.euclidean_pass());
    }

    #[test]
    fn identical_frames_are_at_zero() {
        let img = Image::from_fn(16, 16, |y, x| [y as f64 / 16.0, x as f64 / 16.0, 0.5]);
        let r = acd(
            &[img.clone(), img.clone()],
            &img,
            &ThumbnailEmbedding::default(),
        )
        .unwrap();
        assert_eq!(r.euclidean, 0.0);
        assert!(r.cosine.abs() < 1e-15);
    }

    struct FailsOnDark;

    impl EmbeddingProvider for FailsOnDark {
        fn name(&self) -> &str {
            "fails-on-dark"
        }

        fn embed(&self, image: &Image) -> Result<Vec<f64>> {
            if image.data()[0] < 0.1 {
                return Err(Error::Provider("too dark".into()));
            }
            Ok(vec![image.data()[0]])
        }
    }

    #[test]
    fn failures_list_every_frame() {
        let light = Image::filled(4, 4, [0.5; 3]);
        let dark = Image::filled(4, 4, [0.0; 3]);
        let err = acd(
            &[light.clone(), dark.clone(), light.clone(), dark],
            &light,
            &FailsOnDark,
        )
        .unwrap_err();
        assert!(err.to_string().contains("[1, 3]"), "{err}");
    }
}
