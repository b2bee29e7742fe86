//! Shared inputs for the benchmarks.

use au2av_core::autograd::Tensor;
use au2av_core::media::Image;

/// Deterministic `[n, c, h, w]` tensor in [-1, 1].
pub fn wave_tensor(shape: [usize; 4]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|i| (i as f64 * 0.37).sin()).collect(), &shape).expect("valid shape")
}

/// Smooth gradient image with a sharp vertical edge.
pub fn edge_image(size: usize) -> Image {
    Image::from_fn(size, size, |y, x| {
        let v = if x > size / 2 { 0.85 } else { 0.15 };
        [v, y as f64 / size as f64, 0.5]
    })
}
