//! Basic layers built on [`Tensor`] operations.

use super::params::{Bound, Init, ParamBuilder, ParamId};
use super::tensor::Tensor;
use crate::error::Result;

/// Standardization epsilon shared by every parameter-free normalization.
pub const NORM_EPS: f64 = 1e-5;

/// `(x - mean) / sqrt(var + eps)` with biased variance over `axes`.
pub fn standardize(x: &Tensor, axes: &[usize], eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(axes)?;
    let centered = x.sub(&mean)?;
    let var = centered.sqr().mean_keepdim(axes)?;
    centered.div(&var.affine(1.0, eps).sqrt())
}

/// Per-sample, per-channel standardization over space (NCHW).
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    standardize(x, &[2, 3], NORM_EPS)
}

/// Per-sample standardization over channels and space (NCHW).
pub fn layer_norm(x: &Tensor) -> Result<Tensor> {
    standardize(x, &[1, 2, 3], NORM_EPS)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = pb.param("weight", &[in_dim, out_dim], Init::FanIn(1.0), in_dim)?;
        let bias = if bias {
            Some(pb.param("bias", &[out_dim], Init::Zeros, 0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// `[N, in] -> [N, out]`.
    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self::rect(
            pb,
            in_channels,
            out_channels,
            (kernel, kernel),
            stride,
            (padding, padding),
            true,
        )
    }

    pub fn rect(
        pb: &mut ParamBuilder,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let weight = pb.param(
            "weight",
            &[out_channels, in_channels, kernel.0, kernel.1],
            Init::FanIn(1.0),
            fan_in,
        )?;
        let bias = if bias {
            Some(pb.param("bias", &[out_channels], Init::Zeros, 0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(p.get(self.weight), (self.stride, self.stride), self.padding)?;
        match self.bias {
            Some(b) => y.add(&p.get(b).reshape(&[1, self.out_channels, 1, 1])?),
            None => Ok(y),
        }
    }

    /// Receptive-field growth of this layer: (kernel extent, stride).
    pub fn rf_step(&self) -> (usize, usize) {
        (self.kernel.0, self.stride)
    }
}

/// Gated recurrent unit cell (update/reset gates, tanh candidate).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(pb: &mut ParamBuilder, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_ih: pb.param("w_ih", &[input, 3 * hidden], Init::FanIn(1.0), input)?,
            w_hh: pb.param("w_hh", &[hidden, 3 * hidden], Init::FanIn(1.0), hidden)?,
            b_ih: pb.param("b_ih", &[3 * hidden], Init::Zeros, 0)?,
            b_hh: pb.param("b_hh", &[3 * hidden], Init::Zeros, 0)?,
            hidden,
        })
    }

    /// One step: `x [N, input]`, `h [N, hidden]` -> next hidden state.
    pub fn step(&self, p: &Bound, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hs = self.hidden;
        let gi = x.matmul(p.get(self.w_ih))?.add(p.get(self.b_ih))?;
        let gh = h.matmul(p.get(self.w_hh))?.add(p.get(self.b_hh))?;
        let r = gi.narrow(1, 0, hs)?.add(&gh.narrow(1, 0, hs)?)?.sigmoid();
        let z = gi.narrow(1, hs, hs)?.add(&gh.narrow(1, hs, hs)?)?.sigmoid();
        let n = gi
            .narrow(1, 2 * hs, hs)?
            .add(&r.mul(&gh.narrow(1, 2 * hs, hs)?)?)?
            .tanh();
        // (1 - z) * n + z * h
        n.sub(&z.mul(&n)?)?.add(&z.mul(h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_constant_is_zero() {
        let x = Tensor::full(0.37, &[2, 3, 4, 4]);
        let y = instance_norm(&x).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
        let y = layer_norm(&x).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn standardize_moments() {
        let x = Tensor::new(
            (0..32)
                .map(|v| (v as f64 * 0.7).cos() * 3.0 + 1.0)
                .collect(),
            &[1, 2, 4, 4],
        )
        .unwrap();
        let y = instance_norm(&x).unwrap();
        for c in 0..2 {
            let ch = &y.data()[c * 16..(c + 1) * 16];
            let mean: f64 = ch.iter().sum::<f64>() / 16.0;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
