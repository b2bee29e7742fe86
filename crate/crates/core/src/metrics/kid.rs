//! Kernel distance between two feature sets: unbiased squared MMD with the
//! cubic polynomial kernel `k(x, y) = (x.y / d + 1)^3`.

use rand::seq::index::sample;

use crate::autograd::{seeded_rng, Tensor};
use crate::error::{bail_shape, bail_validation, Result};

pub const KID_SUBSETS: usize = 100;
pub const KID_SUBSET_SIZE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KidEstimate {
    pub value: f64,
    pub std: f64,
}

fn check(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    if x.len() < 2 || y.len() < 2 {
        bail_validation!(
            "kernel distance needs at least 2 samples per set, got {} and {}",
            x.len(),
            y.len()
        );
    }
    let d = x[0].len();
    if d == 0 || x.iter().chain(y).any(|v| v.len() != d) {
        bail_shape!("feature vectors must share one non-zero dimension");
    }
    Ok(d)
}

fn matrix(v: &[&Vec<f64>], d: usize) -> Result<Tensor> {
    Tensor::new(
        v.iter().flat_map(|r| r.iter().copied()).collect(),
        &[v.len(), d],
    )
}

/// Unbiased MMD^2 of two sets of `d`-dimensional features.
pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let d = check(x, y)?;
    let xr: Vec<&Vec<f64>> = x.iter().collect();
    let yr: Vec<&Vec<f64>> = y.iter().collect();
    mmd2_rows(&xr, &yr, d)
}

fn mmd2_rows(x: &[&Vec<f64>], y: &[&Vec<f64>], d: usize) -> Result<f64> {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let (xm, ym) = (matrix(x, d)?, matrix(y, d)?);
    let kernel_sum = |a: &Tensor, b: &Tensor, skip_diag: bool| -> Result<f64> {
        let k = a.matmul(&b.t()?)?.scale(1.0 / d as f64).affine(1.0, 1.0);
        let k: Vec<f64> = k.data().iter().map(|v| v * v * v).collect();
        let total: f64 = k.iter().sum();
        Ok(if skip_diag {
            let rows = a.shape()[0];
            total - (0..rows).map(|i| k[i * rows + i]).sum::<f64>()
        } else {
            total
        })
    };
    Ok(kernel_sum(&xm, &xm, true)? / (m * (m - 1.0))
        + kernel_sum(&ym, &ym, true)? / (n * (n - 1.0))
        - 2.0 * kernel_sum(&xm, &ym, false)? / (m * n))
}

/// Mean and standard deviation of the unbiased estimate over
/// [`KID_SUBSETS`] random subsets of `min(n, KID_SUBSET_SIZE)` samples per
/// set. When both sets fit in one subset every draw is the full set, so the
/// value is exact and the deviation 0.
pub fn kid(real: &[Vec<f64>], fake: &[Vec<f64>], seed: u64) -> Result<KidEstimate> {
    let d = check(real, fake)?;
    let mut rng = seeded_rng(seed);
    let (mr, mf) = (
        real.len().min(KID_SUBSET_SIZE),
        fake.len().min(KID_SUBSET_SIZE),
    );
    let mut values = Vec::with_capacity(KID_SUBSETS);
    for _ in 0..KID_SUBSETS {
        let mut ir = sample(&mut rng, real.len(), mr).into_vec();
        let mut jf = sample(&mut rng, fake.len(), mf).into_vec();
        ir.sort_unstable();
        jf.sort_unstable();
        let xr: Vec<&Vec<f64>> = ir.iter().map(|&i| &real[i]).collect();
        let yr: Vec<&Vec<f64>> = jf.iter().map(|&j| &fake[j]).collect();
        values.push(mmd2_rows(&xr, &yr, d)?);
        if mr == real.len() && mf == fake.len() {
            break;
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    Ok(KidEstimate {
        value: mean,
        std: var.sqrt(),
    })
}
