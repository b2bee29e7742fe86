//! Central finite differences, used as the independent oracle for every
//! analytic gradient in this crate.

use crate::error::Result;

/// Relative error with an absolute floor so that near-zero gradients compare
/// on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central-difference estimate of `d f / d x[i]` for each `i` in `coords`.
pub fn numeric_gradient<F>(f: F, x: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut xs = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let up = f(&xs)?;
            xs[i] = orig - h;
            let down = f(&xs)?;
            xs[i] = orig;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Worst relative error between `analytic` (full gradient) and central
/// differences at `coords`.
pub fn max_relative_error<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let numeric = numeric_gradient(f, x, coords, h)?;
    Ok(coords
        .iter()
        .zip(numeric)
        .map(|(&i, n)| relative_error(analytic[i], n))
        .fold(0.0, f64::max))
}

/// Up to `max` coordinates spread evenly across `0..n`.
pub fn spread_coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max)
        .map(|k| k * n / max + (k * 7919) % (n / max).max(1))
        .collect()
}
