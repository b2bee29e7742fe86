//! Small convolutional regressor from a face frame to 24 eye-landmark
//! coordinates (normalized to [0, 1]), giving a differentiable EAR for
//! generated frames.

use crate::autograd::nn::{Conv2d, Linear};
use crate::autograd::{seeded_rng, Adam, AdamConfig, Bound, ParamBuilder, ParamStore, Tensor};
use crate::error::{bail_shape, Result};
use crate::landmarks::{ear_tensor, FaceLandmarks, FACE_LANDMARK_VALUES};

pub struct LandmarkHead {
    pub store: ParamStore,
    pub resolution: usize,
    convs: Vec<Conv2d>,
    fc: Linear,
}

impl LandmarkHead {
    pub fn new(resolution: usize, channels: usize, seed: u64) -> Result<Self> {
        if resolution < 8 || resolution % 8 != 0 {
            bail_shape!("landmark head resolution must be a multiple of 8, got {resolution}");
        }
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let c = channels;
        let convs = vec![
            Conv2d::new(&mut pb.pp("conv0"), 3, c, 3, 2, 1)?,
            Conv2d::new(&mut pb.pp("conv1"), c, 2 * c, 3, 2, 1)?,
            Conv2d::new(&mut pb.pp("conv2"), 2 * c, 2 * c, 3, 2, 1)?,
        ];
        let side = resolution / 8;
        let fc = Linear::new(
            &mut pb.pp("fc"),
            2 * c * side * side,
            FACE_LANDMARK_VALUES,
            true,
        )?;
        Ok(Self {
            store,
            resolution,
            convs,
            fc,
        })
    }

    /// `[N, 3, R, R]` frames in [-1, 1] to `[N, 24]` normalized coordinates.
    pub fn forward(&self, p: &Bound, frames: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = frames.dims4()?;
        let r = self.resolution;
        let mut x = frames.resize_to(r, r)?;
        let _ = (h, w);
        for c in &self.convs {
            x = c.forward(p, &x)?.leaky_relu(0.2);
        }
        let flat = x.reshape(&[n, x.numel() / n])?;
        Ok(self.fc.forward(p, &flat)?.sigmoid())
    }

    /// Differentiable per-frame EAR, `[N]`.
    pub fn ear(&self, p: &Bound, frames: &Tensor) -> Result<Tensor> {
        ear_tensor(&self.forward(p, frames)?)
    }

    /// Mean squared error against provider landmarks (pixel coordinates of
    /// frames of size `height x width`).
    pub fn regression_loss(
        &self,
        p: &Bound,
        frames: &Tensor,
        targets: &[FaceLandmarks],
        height: usize,
        width: usize,
    ) -> Result<Tensor> {
        let n = frames.shape()[0];
        if targets.len() != n {
            bail_shape!("{} landmark sets for {n} frames", targets.len());
        }
        let flat: Vec<f64> = targets
            .iter()
            .flat_map(|t| t.normalized(height, width).to_flat())
            .collect();
        let target = Tensor::new(flat, &[n, FACE_LANDMARK_VALUES])?;
        self.forward(p, frames)?.sub(&target)?.sqr().mean_all()
    }

    /// Fit the head on labelled frames with Adam; returns the loss trace.
    pub fn fit(
        &mut self,
        frames: &Tensor,
        targets: &[FaceLandmarks],
        steps: usize,
        lr: f64,
    ) -> Result<Vec<f64>> {
        let (_, _, h, w) = frames.dims4()?;
        let mut opt = Adam::new(
            AdamConfig {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            &self.store,
        );
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let p = self.store.bind(true);
            let loss = self.regression_loss(&p, frames, targets, h, w)?;
            trace.push(loss.to_scalar()?);
            let g = loss.backward()?;
            opt.step(&mut self.store, &p.grads(&g))?;
        }
        Ok(trace)
    }
}
