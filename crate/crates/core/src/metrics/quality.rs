//! Full-reference (PSNR, SSIM) and no-reference (CPBD) image quality.

use crate::error::{bail_shape, Result};
use crate::media::Image;

/// PSNR of `[0, 1]` images; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        bail_shape!("psnr of {:?} and {:?} images", a.dims(), b.dims());
    }
    psnr_values(a.data(), b.data(), 1.0)
}

/// `10 log10(max^2 / MSE)` over two equally long sample vectors.
pub fn psnr_values(a: &[f64], b: &[f64], max_value: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        bail_shape!("psnr of {} and {} samples", a.len(), b.len());
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..n).map(|i| k[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|i| k[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM of the luma planes with an 11x11 Gaussian window (sigma 1.5)
/// over every fully covered position, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        bail_shape!("ssim of {:?} and {:?} images", a.dims(), b.dims());
    }
    let (h, w) = a.dims();
    ssim_plane(&a.luma(), &b.luma(), h, w, 1.0)
}

pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        bail_shape!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}");
    }
    if a.len() != h * w || b.len() != h * w {
        bail_shape!("planes of {} and {} values for {h}x{w}", a.len(), b.len());
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(a, a), h, w, &k);
    let bb = filter_valid(&prod(b, b), h, w, &k);
    let ab = filter_valid(&prod(a, b), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Constants of the cumulative probability of blur detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpbdSettings {
    /// Side of the square blocks edges are grouped into.
    pub block: usize,
    /// A block is an edge block when more than this fraction of its pixels
    /// are edge pixels.
    pub edge_block_fraction: f64,
    /// Edge pixels need a horizontal gradient of at least this fraction of
    /// the image's largest.
    pub edge_threshold: f64,
    /// Just-noticeable blur width for low- and high-contrast blocks.
    pub jnb_low_contrast: f64,
    pub jnb_high_contrast: f64,
    /// Block contrast (8-bit scale) at or below which the low-contrast width
    /// applies.
    pub contrast_split: f64,
    pub beta: f64,
    /// Edges whose blur-detection probability is below this count as sharp.
    pub p_jnb: f64,
}

impl Default for CpbdSettings {
    fn default() -> Self {
        Self {
            block: 64,
            edge_block_fraction: 0.002,
            edge_threshold: 0.1,
            jnb_low_contrast: 5.0,
            jnb_high_contrast: 3.0,
            contrast_split: 50.0,
            beta: 3.6,
            p_jnb: 0.64,
        }
    }
}

/// Width of the edge at `(y, x)` along its row: the distance between the
/// intensity extrema on either side, following the gradient's sign.
fn edge_width(g: &[f64], w: usize, y: usize, x: usize, rising: bool) -> f64 {
    let row = &g[y * w..(y + 1) * w];
    let up = |a: f64, b: f64| if rising { b > a } else { b < a };
    let mut right = x;
    while right + 1 < w && up(row[right], row[right + 1]) {
        right += 1;
    }
    let mut left = x;
    while left > 0 && up(row[left - 1], row[left]) {
        left -= 1;
    }
    (right - left) as f64
}

/// Sharpness score in [0, 1]; images without edges score 0.
pub fn cpbd(image: &Image) -> f64 {
    cpbd_with(image, &CpbdSettings::default())
}

pub fn cpbd_with(image: &Image, s: &CpbdSettings) -> f64 {
    let (h, w) = image.dims();
    if h < 3 || w < 3 {
        return 0.0;
    }
    let g: Vec<f64> = image.luma().iter().map(|v| v * 255.0).collect();
    // Horizontal Sobel response.
    let mut gx = vec![0.0; h * w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dy: usize, dx: usize| g[(y + dy - 1) * w + x + dx - 1];
            gx[y * w + x] =
                (p(0, 2) + 2.0 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2.0 * p(1, 0) + p(2, 0));
        }
    }
    let max = gx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    // Edge pixels: strong and a local maximum of |gx| along the row.
    let is_edge = |y: usize, x: usize| {
        let v = gx[y * w + x].abs();
        x > 0
            && x + 1 < w
            && v >= s.edge_threshold * max
            && v >= gx[y * w + x - 1].abs()
            && v > gx[y * w + x + 1].abs()
    };
    let mut probabilities = Vec::new();
    for by in (0..h).step_by(s.block) {
        for bx in (0..w).step_by(s.block) {
            let (y1, x1) = ((by + s.block).min(h), (bx + s.block).min(w));
            let edges: Vec<(usize, usize)> = (by..y1)
                .flat_map(|y| (bx..x1).map(move |x| (y, x)))
                .filter(|&(y, x)| is_edge(y, x))
                .collect();
            let pixels = (y1 - by) * (x1 - bx);
            if edges.len() as f64 <= s.edge_block_fraction * pixels as f64 {
                continue;
            }
            let gr = &g;
            let block = (by..y1).flat_map(|y| (bx..x1).map(move |x| gr[y * w + x]));
            let (lo, hi) = block.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
            let jnb = if hi - lo <= s.contrast_split {
                s.jnb_low_contrast
            } else {
                s.jnb_high_contrast
            };
            for (y, x) in edges {
                let width = edge_width(&g, w, y, x, gx[y * w + x] > 0.0);
                probabilities.push(1.0 - (-(width / jnb).powf(s.beta)).exp());
            }
        }
    }
    if probabilities.is_empty() {
        return 0.0;
    }
    probabilities.iter().filter(|&&p| p < s.p_jnb).count() as f64 / probabilities.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::from_fn(h, w, |y, x| [f(y, x); 3])
    }

    /// Direct per-window SSIM with the 2-D Gaussian built explicitly.
    fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
        let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
        let n = SSIM_WINDOW;
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = g[i] * g[j];
                        ma += k * a[(y0 + i) * w + x0 + j];
                        mb += k * b[(y0 + i) * w + x0 + j];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = g[i] * g[j];
                        let (p, q) = (a[(y0 + i) * w + x0 + j] - ma, b[(y0 + i) * w + x0 + j] - mb);
                        va += k * p * p;
                        vb += k * q * q;
                        cov += k * p * q;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        sum / count as f64
    }

    #[test]
    fn psnr_values_and_symmetry() {
        let a: Vec<f64> = (0..64).map(|i| (i * 3 % 200) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 16.0).collect();
        let want = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr_values(&a, &b, 255.0).unwrap() - want).abs() < 1e-9);
        assert!((want - 24.0484).abs() < 1e-4);
        assert_eq!(psnr_values(&a, &a, 255.0).unwrap(), f64::INFINITY);
        assert_eq!(
            psnr_values(&a, &b, 255.0).unwrap(),
            psnr_values(&b, &a, 255.0).unwrap()
        );
        assert!(psnr(&gray(4, 4, |_, _| 0.0), &gray(4, 5, |_, _| 0.0)).is_err());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let a = vec![0.5; 100];
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let b: Vec<f64> = a.iter().map(|v| v + k as f64 * 0.01).collect();
            let p = psnr_values(&a, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (19, 23);
        let a: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|v| (v * 0.7 + rng.random::<f64>() * 0.3).min(1.0))
            .collect();
        let fast = ssim_plane(&a, &b, h, w, 1.0).unwrap();
        assert!((fast - ssim_oracle(&a, &b, h, w)).abs() < 1e-12);
        assert!((ssim_plane(&a, &a, h, w, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fast, ssim_plane(&b, &a, h, w, 1.0).unwrap());
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        let a = gray(
            24,
            24,
            |y, x| if (y / 3 + x / 4) % 2 == 0 { 1.0 } else { 0.0 },
        );
        let b = gray(24, 24, |y, x| 1.0 - a.pixel(y, x)[0]);
        let v = ssim(&a, &b).unwrap();
        assert!(v < 0.0, "{v}");
        assert!((v - ssim_oracle(&a.luma(), &b.luma(), 24, 24)).abs() < 1e-12);
        assert!(ssim(&gray(10, 30, |_, _| 0.0), &gray(10, 30, |_, _| 0.0)).is_err());
    }

    fn box_blur(img: &Image, k: usize) -> Image {
        let (h, w) = img.dims();
        let r = k as isize / 2;
        Image::from_fn(h, w, |y, x| {
            let mut acc = [0.0; 3];
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let p = img.pixel(yy, xx);
                    (0..3).for_each(|c| acc[c] += p[c]);
                }
            }
            acc.map(|v| v / (k * k) as f64)
        })
    }

    #[test]
    fn cpbd_prefers_sharp_edges() {
        assert_eq!(cpbd(&gray(32, 32, |_, _| 0.4)), 0.0);
        let step = gray(48, 48, |_, x| if (x / 12) % 2 == 0 { 0.1 } else { 0.9 });
        let sharp = cpbd(&step);
        let blurred = cpbd(&box_blur(&step, 5));
        assert!(sharp > blurred, "{sharp} vs {blurred}");
        assert!(sharp > 0.9);
    }

    #[test]
    fn cpbd_range_on_random_images() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (h, w) = (rng.random_range(3..40), rng.random_range(3..40));
            let img = Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]);
            let v = cpbd(&img);
            assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }
}
