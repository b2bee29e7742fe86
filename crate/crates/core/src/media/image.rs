//! RGB frames with channel-last storage and values in [0, 1].

use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{bail_shape, bail_validation, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    /// `[H, W, 3]` row-major.
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            bail_shape!("image must be non-empty, got {height}x{width}");
        }
        if data.len() != height * width * 3 {
            bail_shape!("{} values for a {height}x{width}x3 image", data.len());
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail_validation!("image contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamped(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// ITU-R BT.601 luma, `[H * W]`.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Rows `[start, start + len)`, all columns.
    pub fn rows(&self, start: usize, len: usize) -> Result<Image> {
        if len == 0 || start + len > self.height {
            bail_shape!(
                "rows {start}..{} outside image of height {}",
                start + len,
                self.height
            );
        }
        let row = self.width * 3;
        Ok(Image {
            height: len,
            width: self.width,
            data: self.data[start * row..(start + len) * row].to_vec(),
        })
    }

    /// Stack `self` above `below`.
    pub fn vconcat(&self, below: &Image) -> Result<Image> {
        if self.width != below.width {
            bail_shape!("cannot stack widths {} and {}", self.width, below.width);
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&below.data);
        Ok(Image {
            height: self.height + below.height,
            width: self.width,
            data,
        })
    }

    /// Copy with the bottom row replicated when the height is odd.
    pub fn padded_to_even_height(&self) -> Image {
        if self.height % 2 == 0 {
            return self.clone();
        }
        let row = self.width * 3;
        let mut data = self.data.clone();
        data.extend_from_within((self.height - 1) * row..);
        Image {
            height: self.height + 1,
            width: self.width,
            data,
        }
    }

    /// `[1, 3, H, W]` tensor in [-1, 1].
    pub fn to_tensor(&self) -> Tensor {
        images_to_tensor(std::slice::from_ref(self)).expect("single image batch")
    }

    /// Image `n` of an NCHW tensor in [-1, 1], clamped into [0, 1].
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Image> {
        let (batch, c, h, w) = t.dims4()?;
        if c != 3 || n >= batch {
            bail_shape!("cannot take image {n} from tensor {:?}", t.shape());
        }
        let src = &t.data()[n * 3 * h * w..(n + 1) * 3 * h * w];
        let mut data = vec![0.0; h * w * 3];
        for ch in 0..3 {
            for i in 0..h * w {
                data[i * 3 + ch] = ((src[ch * h * w + i] + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
        Ok(Image {
            height: h,
            width: w,
            data,
        })
    }

    /// Bilinear resize (half-pixel centers), or area averaging for integer
    /// downscales.
    pub fn resized(&self, height: usize, width: usize) -> Result<Image> {
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        Image::from_tensor(&self.to_tensor().resize_to(height, width)?, 0)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|b| b as f64 / 255.0)
            .collect();
        Image::new(h as usize, w as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    /// Quantize to 8 bits per channel, the precision of stored frames.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
                .collect(),
        }
    }
}

/// `[N, 3, H, W]` tensor in [-1, 1] from same-sized images.
pub fn images_to_tensor(images: &[Image]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        bail_shape!("empty image batch");
    };
    let (h, w) = first.dims();
    let mut data = vec![0.0; images.len() * 3 * h * w];
    for (n, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            bail_shape!(
                "mixed image sizes {:?} and {:?} in batch",
                (h, w),
                img.dims()
            );
        }
        let base = n * 3 * h * w;
        for i in 0..h * w {
            for ch in 0..3 {
                data[base + ch * h * w + i] = img.data[i * 3 + ch] * 2.0 - 1.0;
            }
        }
    }
    Tensor::new(data, &[images.len(), 3, h, w])
}

/// A face crop; `is_lower_half` marks the mouth region used by the
/// reconstruction and lip-sync terms.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceRegion {
    pub image: Image,
    pub is_lower_half: bool,
}

/// Rows `[H/2, H)` of the frame, after replicating the bottom row of
/// odd-height frames.
pub fn crop_lower_half(frame: &Image) -> Result<FaceRegion> {
    let even = frame.padded_to_even_height();
    let half = even.height() / 2;
    Ok(FaceRegion {
        image: even.rows(half, half)?,
        is_lower_half: true,
    })
}

/// Rows `[0, H/2)` of the (padded) frame.
pub fn crop_upper_half(frame: &Image) -> Result<FaceRegion> {
    let even = frame.padded_to_even_height();
    let half = even.height() / 2;
    Ok(FaceRegion {
        image: even.rows(0, half)?,
        is_lower_half: false,
    })
}
