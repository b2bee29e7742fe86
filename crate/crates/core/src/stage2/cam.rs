//! Class-activation attention: an auxiliary domain classifier over globally
//! average- and max-pooled features whose weights re-weight the channels.

use crate::autograd::nn::Conv2d;
use crate::autograd::{Bound, Init, ParamBuilder, ParamId, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct CamOutput {
    /// `[N, C, H, W]`, the re-weighted features fused back to `C` channels.
    pub attended: Tensor,
    /// `[N, 1, H, W]`, detached, each sample rescaled so its maximum is 1.
    pub attention_map: Tensor,
    /// `[N]` auxiliary classifier logit.
    pub cam_logit: Tensor,
}

#[derive(Clone, Debug)]
pub struct CamAttention {
    pub w_gap: ParamId,
    pub w_gmp: ParamId,
    pub bias: ParamId,
    pub fuse: Conv2d,
    pub channels: usize,
}

impl CamAttention {
    pub fn new(pb: &mut ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            w_gap: pb.param("w_gap", &[channels], Init::FanIn(1.0), channels)?,
            w_gmp: pb.param("w_gmp", &[channels], Init::FanIn(1.0), channels)?,
            bias: pb.param("bias", &[1], Init::Zeros, 0)?,
            fuse: Conv2d::new(&mut pb.pp("fuse"), 2 * channels, channels, 1, 1, 0)?,
            channels,
        })
    }

    pub fn forward(&self, p: &Bound, f: &Tensor) -> Result<CamOutput> {
        let (n, c, _, _) = f.dims4()?;
        let (w_gap, w_gmp) = (p.get(self.w_gap), p.get(self.w_gmp));
        let gap = f.mean_keepdim(&[2, 3])?.reshape(&[n, c])?;
        let gmp = f.max_keepdim(&[2, 3])?.reshape(&[n, c])?;
        let cam_logit = gap
            .matmul(&w_gap.reshape(&[c, 1])?)?
            .add(&gmp.matmul(&w_gmp.reshape(&[c, 1])?)?)?
            .add(p.get(self.bias))?
            .reshape(&[n])?;
        let weighted = Tensor::cat(
            &[
                f.mul(&w_gap.reshape(&[1, c, 1, 1])?)?,
                f.mul(&w_gmp.reshape(&[1, c, 1, 1])?)?,
            ],
            1,
        )?;
        let attention_map = attention_map(&weighted.detach())?;
        Ok(CamOutput {
            attended: self.fuse.forward(p, &weighted)?.relu(),
            attention_map,
            cam_logit,
        })
    }
}

/// Channel-summed magnitude of `weighted [N, C, H, W]`, each sample divided
/// by its maximum (all-zero samples stay zero).
pub fn attention_map(weighted: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = weighted.dims4()?;
    let d = weighted.data();
    let mut out = vec![0.0; n * h * w];
    for s in 0..n {
        let o = &mut out[s * h * w..(s + 1) * h * w];
        for ch in 0..c {
            let src = &d[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
            for (a, v) in o.iter_mut().zip(src) {
                *a += v.abs();
            }
        }
        let max = o.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            o.iter_mut().for_each(|v| *v /= max);
        }
    }
    Tensor::new(out, &[n, 1, h, w])
}
