//! Injected feature extractors that stand in for large pretrained models,
//! with small deterministic defaults.

use crate::autograd::nn::Conv2d;
use crate::autograd::{seeded_rng, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_validation, Error, Result};
use crate::media::{images_to_tensor, Image};

/// Differentiable multi-layer features of `[N, 3, H, W]` images in [-1, 1].
pub trait FeatureProvider {
    fn name(&self) -> &str;
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>>;
}

/// The image itself as the only layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl FeatureProvider for IdentityFeatures {
    fn name(&self) -> &str {
        "identity"
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![images.clone()])
    }
}

/// Three frozen, randomly initialized conv layers (stride 1, 2, 2) with ReLU.
pub struct FrozenConvFeatures {
    store: ParamStore,
    layers: Vec<Conv2d>,
}

impl FrozenConvFeatures {
    pub fn new(seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let layers = vec![
            Conv2d::new(&mut pb.pp("conv1"), 3, 8, 3, 1, 1)?,
            Conv2d::new(&mut pb.pp("conv2"), 8, 16, 3, 2, 1)?,
            Conv2d::new(&mut pb.pp("conv3"), 16, 16, 3, 2, 1)?,
        ];
        Ok(Self { store, layers })
    }
}

impl FeatureProvider for FrozenConvFeatures {
    fn name(&self) -> &str {
        "frozen-conv"
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let p = self.store.bind(false);
        let mut x = images.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            x = l.forward(&p, &x)?.relu();
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Fixed-length embedding of one image.
pub trait EmbeddingProvider {
    fn name(&self) -> &str;
    fn embed(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Downsampled pixels: the image resized to `size x size`, flattened.
#[derive(Clone, Copy, Debug)]
pub struct ThumbnailEmbedding {
    pub size: usize,
}

impl Default for ThumbnailEmbedding {
    fn default() -> Self {
        Self { size: 8 }
    }
}

impl EmbeddingProvider for ThumbnailEmbedding {
    fn name(&self) -> &str {
        "thumbnail"
    }

    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(image.resized(self.size, self.size)?.data().to_vec())
    }
}

/// Globally average- and max-pooled activations of [`FrozenConvFeatures`].
pub struct FrozenConvEmbedding {
    net: FrozenConvFeatures,
}

impl FrozenConvEmbedding {
    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            net: FrozenConvFeatures::new(seed)?,
        })
    }
}

impl EmbeddingProvider for FrozenConvEmbedding {
    fn name(&self) -> &str {
        "frozen-conv"
    }

    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        let feats = self
            .net
            .features(&images_to_tensor(std::slice::from_ref(image))?)?;
        let last = feats.last().expect("three layers");
        let avg = last.mean_keepdim(&[2, 3])?;
        let max = last.max_keepdim(&[2, 3])?;
        Ok(avg.data().iter().chain(max.data()).copied().collect())
    }
}

/// Frames to a word sequence.
pub trait LipReader {
    fn name(&self) -> &str;
    fn read(&self, frames: &[Image]) -> Result<Vec<String>>;
}

/// Returns a fixed transcript regardless of the frames: a perfect reader for
/// clips whose transcript is known.
#[derive(Clone, Debug)]
pub struct EchoLipReader {
    pub transcript: Vec<String>,
}

impl EchoLipReader {
    pub fn new(transcript: &str) -> Self {
        Self {
            transcript: transcript.split_whitespace().map(String::from).collect(),
        }
    }
}

impl LipReader for EchoLipReader {
    fn name(&self) -> &str {
        "echo"
    }

    fn read(&self, frames: &[Image]) -> Result<Vec<String>> {
        if frames.is_empty() {
            bail_validation!("lip reader got no frames");
        }
        Ok(self.transcript.clone())
    }
}

/// Registry names accepted in configuration files.
pub fn feature_provider_by_name(name: &str, seed: u64) -> Result<Box<dyn FeatureProvider>> {
    match name {
        "frozen-conv" => Ok(Box::new(FrozenConvFeatures::new(seed)?)),
        "identity" => Ok(Box::new(IdentityFeatures)),
        other => Err(Error::Config(format!(
            "unknown perceptual provider `{other}`"
        ))),
    }
}

pub fn embedding_provider_by_name(name: &str, seed: u64) -> Result<Box<dyn EmbeddingProvider>> {
    match name {
        "frozen-conv" => Ok(Box::new(FrozenConvEmbedding::new(seed)?)),
        "thumbnail" => Ok(Box::new(ThumbnailEmbedding::default())),
        other => Err(Error::Config(format!(
            "unknown embedding provider `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_features_are_deterministic() {
        let img = Image::from_fn(16, 16, |y, x| [(y * x) as f64 / 256.0, 0.3, 0.7]);
        let a = FrozenConvEmbedding::new(1).unwrap().embed(&img).unwrap();
        let b = FrozenConvEmbedding::new(1).unwrap().embed(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn frozen_features_have_three_layers() {
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let f = FrozenConvFeatures::new(0).unwrap().features(&x).unwrap();
        let shapes: Vec<&[usize]> = f.iter().map(|t| t.shape()).collect();
        assert_eq!(
            shapes,
            vec![&[2, 8, 16, 16][..], &[2, 16, 8, 8], &[2, 16, 4, 4]]
        );
    }
}
