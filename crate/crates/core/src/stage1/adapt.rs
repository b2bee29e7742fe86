//! Inference-time fine-tuning of a trained generator on one unseen identity.

use log::debug;

use super::generator::SpadeGenerator;
use super::losses::perceptual_loss;
use crate::autograd::{Adam, AdamConfig, Tensor};
use crate::error::{bail_shape, bail_validation, Error, Result};
use crate::providers::FeatureProvider;

pub const DEFAULT_ADAPT_EPOCHS: usize = 5;
pub const DEFAULT_ADAPT_LR: f64 = 1e-4;
/// Adaptation aborts once the loss exceeds this multiple of its start value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptReport {
    /// Perceptual loss before each pass and after the last one
    /// (`epochs + 1` values).
    pub losses: Vec<f64>,
    pub generator_updates: usize,
    pub discriminator_updates: usize,
}

/// Fine-tune a copy of `generator` so that frames generated from `identity`
/// (`[1, 3, R, R]`) and the audio windows `mfcc` (`[K, 13, 1, T]`) stay
/// perceptually close to `identity`. Each epoch is one full-batch Adam step.
/// The source generator is never modified.
pub fn one_shot_adapt(
    generator: &SpadeGenerator,
    identity: &Tensor,
    mfcc: &Tensor,
    provider: &dyn FeatureProvider,
    epochs: usize,
    lr: f64,
) -> Result<(SpadeGenerator, AdaptReport)> {
    let (n, _, _, _) = identity.dims4()?;
    if n != 1 {
        bail_shape!(
            "adaptation takes a single identity image, got {:?}",
            identity.shape()
        );
    }
    if !(lr.is_finite() && lr > 0.0) {
        bail_validation!("adaptation learning rate must be positive, got {lr}");
    }
    let k = mfcc.dims4()?.0;
    let ids = Tensor::cat(&vec![identity.clone(); k], 0)?;
    let loss_of =
        |g: &SpadeGenerator, trainable: bool| -> Result<(Tensor, crate::autograd::Bound)> {
            let p = g.store.bind(trainable);
            let out = g.forward(&p, &ids, mfcc)?;
            Ok((perceptual_loss(&out, &ids, provider, 1.0)?, p))
        };
    let mut adapted = generator.clone();
    let mut report = AdaptReport {
        losses: Vec::with_capacity(epochs + 1),
        generator_updates: 0,
        discriminator_updates: 0,
    };
    if epochs == 0 {
        report.losses.push(loss_of(&adapted, false)?.0.to_scalar()?);
        return Ok((adapted, report));
    }
    let mut opt = Adam::new(
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        &adapted.store,
    );
    for epoch in 0..epochs {
        let (loss, p) = loss_of(&adapted, true)?;
        let v = check(loss.to_scalar()?, report.losses.first().copied(), epoch)?;
        report.losses.push(v);
        debug!("adaptation epoch {epoch}: perceptual loss {v:.6}");
        let g = loss.backward()?;
        opt.step(&mut adapted.store, &p.grads(&g))?;
        report.generator_updates += 1;
    }
    let last = loss_of(&adapted, false)?.0.to_scalar()?;
    report
        .losses
        .push(check(last, report.losses.first().copied(), epochs)?);
    Ok((adapted, report))
}

fn check(v: f64, start: Option<f64>, epoch: usize) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite {
            loss: "adaptation perceptual".into(),
            value: v,
        });
    }
    if let Some(s) = start {
        if v > DIVERGENCE_FACTOR * s {
            return Err(Error::Diverged(format!(
                "adaptation loss rose from {s:.6} to {v:.6} by epoch {epoch}"
            )));
        }
    }
    Ok(v)
}
