//! Stage-1 training losses. Every function returns a scalar tensor that
//! stays connected to its inputs' graph.

use std::collections::BTreeSet;
use std::fmt;

use crate::autograd::Tensor;
use crate::bundle::LossBundle;
use crate::error::{bail_shape, bail_validation, Error, Result};
use crate::providers::FeatureProvider;

/// Scores are clamped into `[SCORE_EPS, 1 - SCORE_EPS]` before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
}

fn ln_clamped(s: &Tensor) -> Tensor {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln()
}

fn ln_one_minus(s: &Tensor) -> Tensor {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS).affine(-1.0, 1.0).ln()
}

/// Log-form GAN loss summed over scales.
///
/// Discriminator: `-E[log D(x)] - E[log(1 - D(G(z)))]`.
/// Generator: `-E[log D(G(z))]`; `real` is ignored.
pub fn adversarial_loss(real: &[Tensor], fake: &[Tensor], side: Side) -> Result<Tensor> {
    if fake.is_empty() {
        bail_shape!("adversarial loss needs at least one scale");
    }
    let mut total = Tensor::scalar(0.0);
    match side {
        Side::Discriminator => {
            if real.len() != fake.len() {
                bail_shape!("{} real scales vs {} fake scales", real.len(), fake.len());
            }
            for (r, f) in real.iter().zip(fake) {
                let term = ln_clamped(r)
                    .mean_all()?
                    .add(&ln_one_minus(f).mean_all()?)?;
                total = total.sub(&term)?;
            }
        }
        Side::Generator => {
            for f in fake {
                total = total.sub(&ln_clamped(f).mean_all()?)?;
            }
        }
    }
    Ok(total)
}

/// Temporal adversarial objective over a window of `L + 1` positions in its
/// maximization form: `sum_i E[log D(x_i)] + E[log(1 - D(G(z_i)))]`.
pub fn temporal_adversarial_loss(real: &[Tensor], fake: &[Tensor], l: usize) -> Result<Tensor> {
    if real.len() != l + 1 || fake.len() != l + 1 {
        bail_shape!(
            "temporal window of L = {l} needs {} positions, got {} real and {} fake",
            l + 1,
            real.len(),
            fake.len()
        );
    }
    let mut total = Tensor::scalar(0.0);
    for (r, f) in real.iter().zip(fake) {
        total = total
            .add(&ln_clamped(r).mean_all()?)?
            .add(&ln_one_minus(f).mean_all()?)?;
    }
    Ok(total)
}

/// Generator side of the temporal term: `-sum_i E[log D(G(z_i))]`.
pub fn temporal_generator_loss(fake: &[Tensor]) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for f in fake {
        total = total.sub(&ln_clamped(f).mean_all()?)?;
    }
    Ok(total)
}

/// `sum_k sum_i mean |D_k^i(x) - D_k^i(G(z))|` over scales `k` and layers `i`.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        bail_shape!("{} real scales vs {} fake scales", real.len(), fake.len());
    }
    let mut total = Tensor::scalar(0.0);
    for (rs, fs) in real.iter().zip(fake) {
        if rs.len() != fs.len() {
            bail_shape!("{} real layers vs {} fake layers", rs.len(), fs.len());
        }
        for (r, f) in rs.iter().zip(fs) {
            if r.shape() != f.shape() {
                bail_shape!("feature shapes {:?} and {:?} differ", r.shape(), f.shape());
            }
            total = total.add(&r.sub(f)?.abs().mean_all()?)?;
        }
    }
    Ok(total)
}

/// `scale * sum_i mean |F_i(a) - F_i(b)|`.
pub fn perceptual_loss(
    a: &Tensor,
    b: &Tensor,
    provider: &dyn FeatureProvider,
    scale: f64,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        bail_shape!(
            "perceptual inputs {:?} and {:?} differ",
            a.shape(),
            b.shape()
        );
    }
    let fa = provider
        .features(a)
        .map_err(|e| Error::Provider(format!("{}: {e}", provider.name())))?;
    let fb = provider
        .features(b)
        .map_err(|e| Error::Provider(format!("{}: {e}", provider.name())))?;
    let mut total = Tensor::scalar(0.0);
    for (x, y) in fa.iter().zip(&fb) {
        total = total.add(&x.sub(y)?.abs().mean_all()?)?;
    }
    Ok(total.scale(scale))
}

/// Rows `[H/2, H)` of an NCHW tensor; odd heights get the bottom row
/// replicated first.
pub fn lower_half(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, _) = x.dims4()?;
    let even = if h % 2 == 1 {
        Tensor::cat(&[x.clone(), x.narrow(2, h - 1, 1)?], 2)?
    } else {
        x.clone()
    };
    let he = even.shape()[2];
    even.narrow(2, he / 2, he / 2)
}

/// Mean absolute difference over the lower half of the frames.
pub fn reconstruction_loss_lower(real: &Tensor, generated: &Tensor) -> Result<Tensor> {
    if real.shape() != generated.shape() {
        bail_shape!(
            "frames {:?} and {:?} differ",
            real.shape(),
            generated.shape()
        );
    }
    lower_half(real)?
        .sub(&lower_half(generated)?)?
        .abs()
        .mean_all()
}

/// `1/(2N) sum [y d^2 + (1 - y) max(margin - d, 0)^2]` with `d = |v - a|_2`
/// per row of `v, a: [N, D]`.
pub fn contrastive_loss(v: &Tensor, a: &Tensor, labels: &[f64], margin: f64) -> Result<Tensor> {
    if !(margin > 0.0) {
        bail_validation!("contrastive margin must be positive, got {margin}");
    }
    let (n, _) = v.dims2()?;
    if n == 0 {
        bail_validation!("contrastive loss needs at least one pair");
    }
    if v.shape() != a.shape() || labels.len() != n {
        bail_shape!(
            "{:?} and {:?} embeddings with {} labels",
            v.shape(),
            a.shape(),
            labels.len()
        );
    }
    let d2 = v.sub(a)?.sqr().sum_keepdim(&[1])?.reshape(&[n])?;
    let d = d2.affine(1.0, 1e-12).sqrt();
    let y = Tensor::new(labels.to_vec(), &[n])?;
    let not_y = y.affine(-1.0, 1.0);
    let hinge = d.affine(-1.0, margin).relu().sqr();
    let per = y.mul(&d2)?.add(&not_y.mul(&hinge)?)?;
    Ok(per.sum_all()?.scale(0.5 / n as f64))
}

/// Mean `|m_r - m_g|` over frames, `[N]` EARs each.
pub fn blink_loss_tensor(ear_real: &Tensor, ear_generated: &Tensor) -> Result<Tensor> {
    ear_real.sub(ear_generated)?.abs().mean_all()
}

/// Stage-1 loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossName {
    Gan,
    Fm,
    Pl,
    Rl,
    Cl,
    Tal,
    Bl,
}

impl LossName {
    pub const ALL: [LossName; 7] = [
        LossName::Gan,
        LossName::Fm,
        LossName::Pl,
        LossName::Rl,
        LossName::Cl,
        LossName::Tal,
        LossName::Bl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossName::Gan => "GAN",
            LossName::Fm => "FM",
            LossName::Pl => "PL",
            LossName::Rl => "RL",
            LossName::Cl => "CL",
            LossName::Tal => "TAL",
            LossName::Bl => "BL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s)
    }
}

impl fmt::Display for LossName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Curriculum phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Phase {
    pub fn from_number(n: u32) -> Option<Phase> {
        match n {
            1 => Some(Phase::One),
            2 => Some(Phase::Two),
            3 => Some(Phase::Three),
            _ => None,
        }
    }

    pub fn number(self) -> u32 {
        self as u32
    }

    pub fn next(self) -> Option<Phase> {
        Phase::from_number(self.number() + 1)
    }

    /// `{GAN, FM, PL}`, then `+{RL, CL, TAL}`, then `+{BL}`.
    pub fn active_losses(self) -> BTreeSet<LossName> {
        use LossName::*;
        let mut s: BTreeSet<LossName> = [Gan, Fm, Pl].into();
        if self >= Phase::Two {
            s.extend([Rl, Cl, Tal]);
        }
        if self >= Phase::Three {
            s.insert(Bl);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1LossWeights {
    pub lambda_fm: f64,
    pub lambda_pl: f64,
    pub lambda_cl: f64,
    pub lambda_bl: f64,
    /// Weight of the lower-half reconstruction term.
    pub lambda_rl: f64,
    pub margin: f64,
}

impl Default for Stage1LossWeights {
    fn default() -> Self {
        Self {
            lambda_fm: 10.0,
            lambda_pl: 10.0,
            lambda_cl: 1.0,
            lambda_bl: 10.0,
            lambda_rl: 1.0,
            margin: 1.0,
        }
    }
}

impl Stage1LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_fm", self.lambda_fm),
            ("lambda_pl", self.lambda_pl),
            ("lambda_cl", self.lambda_cl),
            ("lambda_bl", self.lambda_bl),
            ("lambda_rl", self.lambda_rl),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bail_validation!("{name} must be finite and non-negative, got {v}");
            }
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            bail_validation!("margin must be positive, got {}", self.margin);
        }
        Ok(())
    }

    pub fn weight(&self, name: LossName) -> f64 {
        match name {
            LossName::Gan | LossName::Tal => 1.0,
            LossName::Fm => self.lambda_fm,
            LossName::Pl => self.lambda_pl,
            LossName::Rl => self.lambda_rl,
            LossName::Cl => self.lambda_cl,
            LossName::Bl => self.lambda_bl,
        }
    }
}

/// Weighted sum of the losses active in `phase`; inactive entries of the
/// bundle are ignored, missing active ones are an error.
pub fn stage1_objective(
    bundle: &LossBundle,
    weights: &Stage1LossWeights,
    phase: Phase,
) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for name in phase.active_losses() {
        let Some(t) = bundle.get(name.as_str()) else {
            return Err(Error::Precondition(format!(
                "loss {name} is active in phase {} but missing from the bundle",
                phase.number()
            )));
        };
        let w = weights.weight(name);
        if w != 0.0 {
            total = total.add(&t.scale(w))?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::IdentityFeatures;
    use std::f64::consts::LN_2;

    fn full(v: f64, shape: &[usize]) -> Tensor {
        Tensor::full(v, shape)
    }

    #[test]
    fn adversarial_values() {
        let ones = vec![full(1.0, &[1, 1, 4, 4]); 3];
        let zeros = vec![full(0.0, &[1, 1, 4, 4]); 3];
        let d = adversarial_loss(&ones, &zeros, Side::Discriminator)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!(d.abs() < 1e-6);
        let half = vec![full(0.5, &[1, 1, 2, 2])];
        let d = adversarial_loss(&half, &half, Side::Discriminator)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!((d - 2.0 * LN_2).abs() < 1e-12);
        let g: Vec<f64> = [0.1, 0.5, 0.9]
            .iter()
            .map(|&s| {
                adversarial_loss(&[], &[full(s, &[1, 1, 2, 2])], Side::Generator)
                    .unwrap()
                    .to_scalar()
                    .unwrap()
            })
            .collect();
        assert!(g[0] > g[1] && g[1] > g[2]);
    }

    #[test]
    fn temporal_values() {
        let half = vec![full(0.5, &[1, 1, 3, 3]); 5];
        let v = temporal_adversarial_loss(&half, &half, 4)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!((v - 10.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(temporal_adversarial_loss(&half, &half[..4], 4).is_err());
        let perfect = temporal_adversarial_loss(&[full(1.0, &[1])], &[full(0.0, &[1])], 0).unwrap();
        assert!(perfect.to_scalar().unwrap().abs() < 1e-6);
    }

    #[test]
    fn feature_matching_values() {
        let a = vec![vec![full(1.0, &[4])]];
        let b = vec![vec![full(0.0, &[4])]];
        assert_eq!(
            feature_matching_loss(&a, &b).unwrap().to_scalar().unwrap(),
            1.0
        );
        assert_eq!(
            feature_matching_loss(&a, &a).unwrap().to_scalar().unwrap(),
            0.0
        );
        assert!(feature_matching_loss(&a, &[]).is_err());
    }

    #[test]
    fn perceptual_with_identity_features() {
        let a = full(0.0, &[1, 3, 2, 2]);
        let b = full(1.0, &[1, 3, 2, 2]);
        assert_eq!(
            perceptual_loss(&a, &b, &IdentityFeatures, 1.0)
                .unwrap()
                .to_scalar()
                .unwrap(),
            1.0
        );
        assert_eq!(
            perceptual_loss(&a, &a, &IdentityFeatures, 1.0)
                .unwrap()
                .to_scalar()
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn reconstruction_ignores_top_half() {
        let real = full(0.2, &[1, 3, 8, 8]);
        let top = Tensor::cat(&[full(0.7, &[1, 3, 4, 8]), full(0.2, &[1, 3, 4, 8])], 2).unwrap();
        assert_eq!(
            reconstruction_loss_lower(&real, &top)
                .unwrap()
                .to_scalar()
                .unwrap(),
            0.0
        );
        let all = full(0.7, &[1, 3, 8, 8]);
        assert!(
            (reconstruction_loss_lower(&real, &all)
                .unwrap()
                .to_scalar()
                .unwrap()
                - 0.5)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn contrastive_values() {
        let v = Tensor::new(vec![2.0, 0.0], &[1, 2]).unwrap();
        let a = Tensor::new(vec![0.0, 0.0], &[1, 2]).unwrap();
        assert_eq!(
            contrastive_loss(&v, &a, &[1.0], 1.0)
                .unwrap()
                .to_scalar()
                .unwrap(),
            2.0
        );
        assert_eq!(
            contrastive_loss(&v, &a, &[0.0], 1.0)
                .unwrap()
                .to_scalar()
                .unwrap(),
            0.0
        );
        assert_eq!(
            contrastive_loss(&v, &v, &[1.0], 1.0)
                .unwrap()
                .to_scalar()
                .unwrap(),
            0.0
        );
        assert!(contrastive_loss(&v, &a, &[1.0], 0.0).is_err());
    }

    fn bundle_of_ones() -> LossBundle {
        let mut b = LossBundle::new();
        for n in LossName::ALL {
            b.insert(n.as_str(), Tensor::scalar(1.0));
        }
        b
    }

    #[test]
    fn objective_gating() {
        let ones = Stage1LossWeights {
            lambda_fm: 1.0,
            lambda_pl: 1.0,
            lambda_cl: 1.0,
            lambda_bl: 1.0,
            lambda_rl: 1.0,
            margin: 1.0,
        };
        let b = bundle_of_ones();
        let v = |p| stage1_objective(&b, &ones, p).unwrap().to_scalar().unwrap();
        assert_eq!(v(Phase::One), 3.0);
        assert_eq!(v(Phase::Two), 6.0);
        assert_eq!(v(Phase::Three), 7.0);
        assert_eq!(Phase::Three.active_losses().len(), 7);
        let no_bl = Stage1LossWeights {
            lambda_bl: 0.0,
            ..ones
        };
        assert_eq!(
            stage1_objective(&b, &no_bl, Phase::Three)
                .unwrap()
                .to_scalar()
                .unwrap(),
            6.0
        );
        let mut partial = LossBundle::new();
        partial.insert("GAN", Tensor::scalar(1.0));
        assert!(stage1_objective(&partial, &ones, Phase::One).is_err());
    }
}
