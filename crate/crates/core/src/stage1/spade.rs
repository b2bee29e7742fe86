//! Spatially-adaptive normalization: parameter-free standardization of an
//! activation, modulated by scale and shift maps predicted from the identity
//! image.

use crate::autograd::nn::{standardize, Conv2d, NORM_EPS};
use crate::autograd::{Bound, ParamBuilder, Tensor};
use crate::error::Result;

/// Per-channel scale and shift maps at the activation's resolution.
#[derive(Clone, Debug)]
pub struct SpadeModulation {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug)]
pub struct Spade {
    shared: Conv2d,
    gamma_beta: Conv2d,
    channels: usize,
}

impl Spade {
    pub fn new(pb: &mut ParamBuilder, channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            shared: Conv2d::new(&mut pb.pp("shared"), 3, hidden, 3, 1, 1)?,
            gamma_beta: Conv2d::new(&mut pb.pp("gamma_beta"), hidden, 2 * channels, 3, 1, 1)?,
            channels,
        })
    }

    /// Parameter ids of the layer producing gamma and beta.
    pub fn output_layer(&self) -> &Conv2d {
        &self.gamma_beta
    }

    /// Modulation maps at `h x w` from an identity image of any size.
    pub fn modulation(
        &self,
        p: &Bound,
        identity: &Tensor,
        h: usize,
        w: usize,
    ) -> Result<SpadeModulation> {
        let x = identity.resize_to(h, w)?;
        let hidden = self.shared.forward(p, &x)?.relu();
        let gb = self.gamma_beta.forward(p, &hidden)?;
        Ok(SpadeModulation {
            gamma: gb.narrow(1, 0, self.channels)?,
            beta: gb.narrow(1, self.channels, self.channels)?,
        })
    }

    /// `standardize(x) * (1 + gamma) + beta`, standardizing each sample and
    /// channel over space.
    pub fn forward(&self, p: &Bound, x: &Tensor, identity: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let m = self.modulation(p, identity, h, w)?;
        spade_normalize(x, &m)
    }
}

pub fn spade_normalize(x: &Tensor, m: &SpadeModulation) -> Result<Tensor> {
    standardize(x, &[2, 3], NORM_EPS)?
        .mul(&m.gamma.affine(1.0, 1.0))?
        .add(&m.beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{seeded_rng, ParamStore};

    fn spade(channels: usize) -> (Spade, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(1);
        let s = Spade::new(&mut ParamBuilder::new(&mut store, &mut rng), channels, 8).unwrap();
        (s, store)
    }

    fn ramp(shape: &[usize], k: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            (0..n).map(|i| ((i as f64) * k).sin() * 2.0 + 0.3).collect(),
            shape,
        )
        .unwrap()
    }

    #[test]
    fn zero_modulation_is_plain_standardization() {
        let (s, mut store) = spade(4);
        let gb = s.output_layer();
        for id in [Some(gb.weight), gb.bias].into_iter().flatten() {
            store.get_mut(id).value.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = ramp(&[2, 4, 8, 8], 0.37);
        let img = ramp(&[2, 3, 64, 64], 0.11);
        let out = s.forward(&store.bind(false), &x, &img).unwrap();
        let want = standardize(&x, &[2, 3], NORM_EPS).unwrap();
        let dev = out
            .data()
            .iter()
            .zip(want.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6);
    }

    #[test]
    fn constant_channel_becomes_beta() {
        let (s, store) = spade(3);
        let p = store.bind(false);
        let x = Tensor::full(4.2, &[1, 3, 8, 8]);
        let img = ramp(&[1, 3, 64, 64], 0.2);
        let out = s.forward(&p, &x, &img).unwrap();
        let m = s.modulation(&p, &img, 8, 8).unwrap();
        for (a, b) in out.data().iter().zip(m.beta.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn modulation_matches_activation_size() {
        let (s, store) = spade(5);
        let m = s
            .modulation(&store.bind(false), &ramp(&[1, 3, 64, 64], 0.1), 8, 8)
            .unwrap();
        assert_eq!(m.gamma.shape(), &[1, 5, 8, 8]);
        assert_eq!(m.beta.shape(), &[1, 5, 8, 8]);
    }
}
