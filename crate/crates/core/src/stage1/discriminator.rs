//! Multi-scale PatchGAN discriminators for single frames and for stacked
//! frame windows.

use crate::autograd::nn::Conv2d;
use crate::autograd::{seeded_rng, Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, Result};

pub const NUM_SCALES: usize = 3;

/// Score maps (after sigmoid) and intermediate activations, one entry per
/// scale, finest first.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    pub score_maps: Vec<Tensor>,
    pub features: Vec<Vec<Tensor>>,
}

impl DiscriminatorOutput {
    /// Copy with every tensor cut from the graph.
    pub fn detached(&self) -> DiscriminatorOutput {
        DiscriminatorOutput {
            score_maps: self.score_maps.iter().map(Tensor::detach).collect(),
            features: self
                .features
                .iter()
                .map(|f| f.iter().map(Tensor::detach).collect())
                .collect(),
        }
    }

    /// Score maps of channel `c` at every scale.
    pub fn channel(&self, c: usize) -> Result<Vec<Tensor>> {
        self.score_maps.iter().map(|s| s.narrow(1, c, 1)).collect()
    }
}

#[derive(Clone, Debug)]
struct PatchDiscriminator {
    layers: Vec<Conv2d>,
}

impl PatchDiscriminator {
    fn new(pb: &mut ParamBuilder, cin: usize, cout: usize, nf: usize) -> Result<Self> {
        Ok(Self {
            layers: vec![
                Conv2d::new(&mut pb.pp("conv0"), cin, nf, 4, 2, 1)?,
                Conv2d::new(&mut pb.pp("conv1"), nf, 2 * nf, 4, 2, 1)?,
                Conv2d::new(&mut pb.pp("conv2"), 2 * nf, 4 * nf, 3, 1, 1)?,
                Conv2d::new(&mut pb.pp("conv3"), 4 * nf, cout, 3, 1, 1)?,
            ],
        })
    }

    fn forward(&self, p: &Bound, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut h = x.clone();
        let mut feats = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(p, &h)?;
            if i < last {
                h = h.leaky_relu(0.2);
                feats.push(h.clone());
            }
        }
        Ok((h.sigmoid(), feats))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
}

/// Three structurally identical patch discriminators on the input at full,
/// half and quarter resolution.
pub struct MultiScaleDiscriminator {
    pub config: DiscriminatorConfig,
    pub store: ParamStore,
    scales: Vec<PatchDiscriminator>,
}

impl MultiScaleDiscriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let scales = (0..NUM_SCALES)
            .map(|k| {
                PatchDiscriminator::new(
                    &mut pb.pp(&format!("scale{k}")),
                    config.in_channels,
                    config.out_channels,
                    config.base_channels,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            store,
            scales,
        })
    }

    /// The input pyramid: `x`, and `x` average-pooled by 2 and by 4.
    pub fn scale_inputs(x: &Tensor) -> Result<Vec<Tensor>> {
        (0..NUM_SCALES).map(|k| x.avg_pool2d(1 << k)).collect()
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<DiscriminatorOutput> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            bail_shape!(
                "discriminator expects {} channels, got {c}",
                self.config.in_channels
            );
        }
        if h % 4 != 0 || w % 4 != 0 || h < 16 || w < 16 {
            bail_shape!(
                "discriminator input must be at least 16x16 and divisible by 4, got {h}x{w}"
            );
        }
        let mut out = DiscriminatorOutput {
            score_maps: Vec::new(),
            features: Vec::new(),
        };
        for (d, xi) in self.scales.iter().zip(Self::scale_inputs(x)?) {
            let (s, f) = d.forward(p, &xi)?;
            out.score_maps.push(s);
            out.features.push(f);
        }
        Ok(out)
    }
}

/// Frame discriminator: the frame is judged together with the identity image.
pub fn frame_discriminate(
    d: &MultiScaleDiscriminator,
    p: &Bound,
    frame: &Tensor,
    identity: &Tensor,
) -> Result<DiscriminatorOutput> {
    d.forward(p, &Tensor::cat(&[frame.clone(), identity.clone()], 1)?)
}

/// `L + 1` frames `[L+1, 3, H, W]` stacked along channels into `[1, 3(L+1), H, W]`.
pub fn stack_window(frames: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = frames.dims4()?;
    frames.reshape(&[1, n * c, h, w])
}

/// Temporal discriminator over one window; the score map of channel `i`
/// judges window position `i`.
pub fn temporal_discriminate(
    d: &MultiScaleDiscriminator,
    p: &Bound,
    window: &Tensor,
    l: usize,
) -> Result<DiscriminatorOutput> {
    let (n, c, _, _) = window.dims4()?;
    if n != l + 1 || c != 3 {
        bail_shape!(
            "temporal window must be [{}, 3, H, W], got {:?}",
            l + 1,
            window.shape()
        );
    }
    if d.config.in_channels != 3 * (l + 1) || d.config.out_channels != l + 1 {
        bail_shape!("temporal discriminator is not configured for L = {l}");
    }
    d.forward(p, &stack_window(window)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|i| ((i as f64) * 0.37).sin()).collect(), shape).unwrap()
    }

    fn frame_d() -> MultiScaleDiscriminator {
        MultiScaleDiscriminator::new(
            DiscriminatorConfig {
                in_channels: 6,
                out_channels: 1,
                base_channels: 4,
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn pyramid_sizes_and_exact_pooling() {
        let x = input(&[1, 3, 128, 128]);
        let s = MultiScaleDiscriminator::scale_inputs(&x).unwrap();
        let sides: Vec<usize> = s.iter().map(|t| t.shape()[2]).collect();
        assert_eq!(sides, vec![128, 64, 32]);
        // Scale 3 is the 4x4 block mean of scale 1.
        let want: f64 = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| x_at(&x, r, c))
            .sum::<f64>()
            / 16.0;
        assert!((s[2].data()[0] - want).abs() < 1e-12);
    }

    fn x_at(t: &Tensor, y: usize, x: usize) -> f64 {
        t.data()[y * 128 + x]
    }

    #[test]
    fn deterministic_with_features_at_every_scale() {
        let d = frame_d();
        let p = d.store.bind(false);
        let f = input(&[1, 3, 64, 64]);
        let a = frame_discriminate(&d, &p, &f, &f).unwrap();
        let b = frame_discriminate(&d, &p, &f, &f).unwrap();
        assert_eq!(a.score_maps.len(), 3);
        assert!(a.features.iter().all(|f| !f.is_empty()));
        for (x, y) in a.score_maps.iter().zip(&b.score_maps) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn temporal_window_has_fifteen_channels() {
        let d = MultiScaleDiscriminator::new(
            DiscriminatorConfig {
                in_channels: 15,
                out_channels: 5,
                base_channels: 4,
            },
            1,
        )
        .unwrap();
        let p = d.store.bind(false);
        let same = Tensor::cat(&vec![input(&[1, 3, 32, 32]); 5], 0).unwrap();
        assert_eq!(stack_window(&same).unwrap().shape(), &[1, 15, 32, 32]);
        let out = temporal_discriminate(&d, &p, &same, 4).unwrap();
        assert!(out
            .score_maps
            .iter()
            .all(|s| s.all_finite() && s.shape()[1] == 5));
        assert!(temporal_discriminate(&d, &p, &same.narrow(0, 0, 4).unwrap(), 4).is_err());
    }
}
