//! Stage-2 losses. Networks enter the temporal terms as closures so the
//! same code serves trained models and analytic stand-ins.

use crate::autograd::Tensor;
use crate::bundle::LossBundle;
use crate::error::{bail_shape, bail_validation, Error, Result};
use crate::stage1::losses::{blink_loss_tensor, reconstruction_loss_lower, Side};

pub const GAN: &str = "GAN";
pub const CAM: &str = "CAM";
pub const RECYCLE: &str = "RECYCLE";
pub const IDENTITY: &str = "IDENTITY";
pub const LIP: &str = "LIP";
pub const BL: &str = "BL";

/// Least-squares adversarial loss summed over discriminator heads.
///
/// Discriminator: `E[(D(y) - 1)^2] + E[D(G(x))^2]` per head.
/// Generator: `E[(D(G(x)) - 1)^2]` per head; `real` is ignored.
pub fn lsgan_loss(real: &[&Tensor], fake: &[&Tensor], side: Side) -> Result<Tensor> {
    if fake.is_empty() {
        bail_shape!("least-squares loss needs at least one head");
    }
    let mut total = Tensor::scalar(0.0);
    match side {
        Side::Discriminator => {
            if real.len() != fake.len() {
                bail_shape!("{} real heads vs {} fake heads", real.len(), fake.len());
            }
            for (r, f) in real.iter().zip(fake) {
                total = total
                    .add(&r.affine(1.0, -1.0).sqr().mean_all()?)?
                    .add(&f.sqr().mean_all()?)?;
            }
        }
        Side::Generator => {
            for f in fake {
                total = total.add(&f.affine(1.0, -1.0).sqr().mean_all()?)?;
            }
        }
    }
    Ok(total)
}

/// Binary cross-entropy on logits: `a` labelled 1, `b` labelled 0.
/// `mean softplus(-a) + mean softplus(b)`.
pub fn cam_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.neg()
        .softplus()
        .mean_all()?
        .add(&b.softplus().mean_all()?)
}

/// `E|x - G(x)|`.
pub fn identity_loss(x: &Tensor, translated: &Tensor) -> Result<Tensor> {
    if x.shape() != translated.shape() {
        bail_shape!("frames {:?} and {:?} differ", x.shape(), translated.shape());
    }
    x.sub(translated)?.abs().mean_all()
}

/// Mean absolute error between `x` and its round trip over rows `[H/2, H)`.
pub fn lip_sync_loss(x: &Tensor, cycled: &Tensor) -> Result<Tensor> {
    reconstruction_loss_lower(x, cycled)
}

/// Mean `|EAR(x) - EAR(cycle(x))|`.
pub fn stage2_blink_loss(ear_real: &Tensor, ear_cycled: &Tensor) -> Result<Tensor> {
    blink_loss_tensor(ear_real, ear_cycled)
}

/// `mean((x_{t+1} - back(predict(to_other(x_1), ..., to_other(x_t))))^2)`;
/// `frames` holds `x_1 .. x_{t+1}`.
pub fn recycle_loss<F, B, P>(frames: &[Tensor], to_other: F, back: B, predict: P) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
    B: Fn(&Tensor) -> Result<Tensor>,
    P: Fn(&[Tensor]) -> Result<Tensor>,
{
    if frames.len() < 2 {
        bail_validation!(
            "recycle loss needs at least two frames, got {}",
            frames.len()
        );
    }
    let (past, next) = frames.split_at(frames.len() - 1);
    let translated = past.iter().map(&to_other).collect::<Result<Vec<_>>>()?;
    recycle_from_translated(&translated, &next[0], back, predict)
}

/// [`recycle_loss`] with the past frames already translated.
pub fn recycle_from_translated<B, P>(
    translated: &[Tensor],
    next: &Tensor,
    back: B,
    predict: P,
) -> Result<Tensor>
where
    B: Fn(&Tensor) -> Result<Tensor>,
    P: Fn(&[Tensor]) -> Result<Tensor>,
{
    if translated.is_empty() {
        bail_validation!("recycle loss needs at least one past frame");
    }
    let predicted = back(&predict(translated)?)?;
    if predicted.shape() != next.shape() {
        bail_shape!(
            "recycled frame {:?} vs target {:?}",
            predicted.shape(),
            next.shape()
        );
    }
    next.sub(&predicted)?.sqr().mean_all()
}

/// Sum over every window `x_{s..s+t}` of the mean squared error of
/// predicting `x_{s+t}` from the `t` frames before it.
pub fn predictor_loss<P>(clip: &[Tensor], t: usize, predict: P) -> Result<Tensor>
where
    P: Fn(&[Tensor]) -> Result<Tensor>,
{
    if t == 0 || clip.len() < t + 1 {
        bail_validation!(
            "predictor loss needs at least {} frames, got {}",
            t + 1,
            clip.len()
        );
    }
    let mut total = Tensor::scalar(0.0);
    for s in 0..clip.len() - t {
        let err = clip[s + t]
            .sub(&predict(&clip[s..s + t])?)?
            .sqr()
            .mean_all()?;
        total = total.add(&err)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2LossWeights {
    pub lambda_cam: f64,
    pub lambda_recycle: f64,
    pub lambda_identity: f64,
    pub lambda_lip: f64,
    pub lambda_bl: f64,
}

impl Default for Stage2LossWeights {
    fn default() -> Self {
        Self {
            lambda_cam: 2000.0,
            lambda_recycle: 100.0,
            lambda_identity: 10.0,
            lambda_lip: 100.0,
            lambda_bl: 100.0,
        }
    }
}

impl Stage2LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v.is_finite() && v >= 0.0) {
                bail_validation!("{name} must be finite and non-negative, got {v}");
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("lambda_cam", self.lambda_cam),
            ("lambda_recycle", self.lambda_recycle),
            ("lambda_identity", self.lambda_identity),
            ("lambda_lip", self.lambda_lip),
            ("lambda_bl", self.lambda_bl),
        ]
    }

    /// `(loss name, weight)` of every generator term.
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            (GAN, 1.0),
            (CAM, self.lambda_cam),
            (RECYCLE, self.lambda_recycle),
            (IDENTITY, self.lambda_identity),
            (LIP, self.lambda_lip),
            (BL, self.lambda_bl),
        ]
    }
}

/// Weighted generator objective. Terms with zero weight are skipped and may
/// be absent; a missing term with positive weight is an error.
pub fn stage2_objective(bundle: &LossBundle, weights: &Stage2LossWeights) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for (name, w) in weights.terms() {
        if w == 0.0 {
            continue;
        }
        let t = bundle.get(name).ok_or_else(|| {
            Error::Precondition(format!(
                "loss {name} has weight {w} but is missing from the bundle"
            ))
        })?;
        total = total.add(&t.scale(w))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn full(v: f64) -> Tensor {
        Tensor::full(v, &[1, 3, 4, 4])
    }

    fn close(t: &Tensor, want: f64, tol: f64) {
        let v = t.to_scalar().unwrap();
        assert!((v - want).abs() < tol, "{v} vs {want}");
    }

    #[test]
    fn least_squares_values() {
        let (one, zero, half) = (full(1.0), full(0.0), full(0.5));
        close(
            &lsgan_loss(&[&one, &one], &[&zero, &zero], Side::Discriminator).unwrap(),
            0.0,
            1e-12,
        );
        close(
            &lsgan_loss(&[&half], &[&half], Side::Discriminator).unwrap(),
            0.5,
            1e-12,
        );
        close(
            &lsgan_loss(&[&half, &half], &[&half, &half], Side::Discriminator).unwrap(),
            1.0,
            1e-12,
        );
        close(
            &lsgan_loss(&[], &[&one], Side::Generator).unwrap(),
            0.0,
            1e-12,
        );
        assert!(
            lsgan_loss(&[], &[&half], Side::Generator)
                .unwrap()
                .to_scalar()
                .unwrap()
                > 0.0
        );
        assert!(lsgan_loss(&[&one], &[&zero, &zero], Side::Discriminator).is_err());
    }

    #[test]
    fn least_squares_minimum_on_grid() {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in -20..=40 {
            for j in -20..=40 {
                let (r, f) = (i as f64 * 0.05, j as f64 * 0.05);
                let v = lsgan_loss(
                    &[&Tensor::scalar(r)],
                    &[&Tensor::scalar(f)],
                    Side::Discriminator,
                )
                .unwrap()
                .to_scalar()
                .unwrap();
                if v < best.0 {
                    best = (v, r, f);
                }
            }
        }
        assert!(best.0.abs() < 1e-12);
        assert!((best.1 - 1.0).abs() < 1e-12 && best.2.abs() < 1e-12);
    }

    #[test]
    fn cam_values() {
        let z = Tensor::zeros(&[4]);
        close(&cam_loss(&z, &z).unwrap(), 2.0 * LN_2, 1e-12);
        let big = Tensor::full(1e6, &[4]);
        close(&cam_loss(&big, &big.neg()).unwrap(), 0.0, 1e-12);
        let a = Tensor::new(vec![0.3, -1.2, 2.0], &[3]).unwrap();
        let b = Tensor::new(vec![0.5, 0.1], &[2]).unwrap();
        let a_perm = Tensor::new(vec![2.0, 0.3, -1.2], &[3]).unwrap();
        let v1 = cam_loss(&a, &b).unwrap().to_scalar().unwrap();
        let v2 = cam_loss(&a_perm, &b).unwrap().to_scalar().unwrap();
        assert!((v1 - v2).abs() < 1e-15);
    }

    #[test]
    fn identity_and_lip_values() {
        let x = full(0.1);
        close(&identity_loss(&x, &x).unwrap(), 0.0, 1e-15);
        close(&identity_loss(&x, &x.affine(1.0, 0.2)).unwrap(), 0.2, 1e-12);
        close(&lip_sync_loss(&x, &x.affine(1.0, 0.3)).unwrap(), 0.3, 1e-12);
        let top_only = Tensor::cat(
            &[
                x.narrow(2, 0, 2).unwrap().affine(1.0, 0.3),
                x.narrow(2, 2, 2).unwrap(),
            ],
            2,
        )
        .unwrap();
        close(&lip_sync_loss(&x, &top_only).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn blink_values() {
        let a = Tensor::new(vec![0.28], &[1]).unwrap();
        let b = Tensor::new(vec![0.33], &[1]).unwrap();
        close(&stage2_blink_loss(&a, &b).unwrap(), 0.05, 1e-12);
        close(&stage2_blink_loss(&b, &a).unwrap(), 0.05, 1e-12);
        close(&stage2_blink_loss(&a, &a).unwrap(), 0.0, 1e-15);
    }

    fn id(x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    #[test]
    fn recycle_and_predictor_values() {
        let clip: Vec<Tensor> = (0..5).map(|_| full(0.4)).collect();
        let last = |f: &[Tensor]| Ok(f[f.len() - 1].clone());
        let off = |f: &[Tensor]| Ok(f[f.len() - 1].affine(1.0, 0.1));
        close(&recycle_loss(&clip[..3], id, id, last).unwrap(), 0.0, 1e-15);
        close(&recycle_loss(&clip[..3], id, id, off).unwrap(), 0.01, 1e-12);
        close(&predictor_loss(&clip, 2, last).unwrap(), 0.0, 1e-15);
        close(&predictor_loss(&clip, 2, off).unwrap(), 0.03, 1e-12);
        assert!(predictor_loss(&clip[..2], 2, last).is_err());
        assert!(recycle_loss(&clip[..1], id, id, last).is_err());
    }

    #[test]
    fn recycle_with_identity_generators_is_prediction_error() {
        let clip: Vec<Tensor> = (0..3)
            .map(|k| {
                Tensor::new(
                    (0..48)
                        .map(|i| ((i * (k + 2)) as f64 * 0.37).sin())
                        .collect(),
                    &[1, 3, 4, 4],
                )
                .unwrap()
            })
            .collect();
        let pred = |f: &[Tensor]| f[0].scale(0.3).add(&f[1].scale(0.6));
        let r = recycle_loss(&clip, id, id, pred)
            .unwrap()
            .to_scalar()
            .unwrap();
        let p = predictor_loss(&clip, 2, pred).unwrap().to_scalar().unwrap();
        assert!((r - p).abs() < 1e-9);
    }

    #[test]
    fn objective_skips_zero_weights() {
        let mut b = LossBundle::new();
        for (name, _) in Stage2LossWeights::default().terms() {
            b.insert(name, Tensor::scalar(1.0));
        }
        let w = Stage2LossWeights::default();
        close(
            &stage2_objective(&b, &w).unwrap(),
            1.0 + 2000.0 + 100.0 + 10.0 + 100.0 + 100.0,
            1e-9,
        );
        let zero = Stage2LossWeights {
            lambda_cam: 0.0,
            lambda_recycle: 0.0,
            lambda_identity: 0.0,
            lambda_lip: 0.0,
            lambda_bl: 0.0,
        };
        close(&stage2_objective(&b, &zero).unwrap(), 1.0, 1e-12);
        let mut partial = LossBundle::new();
        partial.insert(GAN, Tensor::scalar(2.0));
        close(&stage2_objective(&partial, &zero).unwrap(), 2.0, 1e-12);
        assert!(matches!(
            stage2_objective(&partial, &w),
            Err(Error::Precondition(_))
        ));
        assert!(Stage2LossWeights {
            lambda_lip: -1.0,
            ..w
        }
        .validate()
        .is_err());
    }
}
