//! Eye landmarks and the eye aspect ratio (EAR).
//!
//! Points follow the usual six-point eye layout: p1 and p4 are the corners,
//! p2/p3 lie on the upper lid and p6/p5 below them on the lower lid.

use std::fs;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{bail_shape, bail_validation, Error, Result};
use crate::media::Image;

pub const LANDMARK_FILE: &str = "landmarks.txt";
/// Coordinates per frame: two eyes, six points, (x, y).
pub const FACE_LANDMARK_VALUES: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeLandmarkSet {
    pub points: [[f64; 2]; 6],
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl EyeLandmarkSet {
    pub fn new(points: [[f64; 2]; 6]) -> Self {
        Self { points }
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            points: self.points.map(f),
        }
    }
}

/// `(|p2 - p6| + |p3 - p5|) / |p1 - p4|`.
pub fn eye_aspect_ratio(eye: &EyeLandmarkSet) -> Result<f64> {
    let p = &eye.points;
    let width = dist(p[0], p[3]);
    if !(width > 0.0) {
        bail_validation!("degenerate eye: corner points coincide");
    }
    Ok((dist(p[1], p[5]) + dist(p[2], p[4])) / width)
}

/// `|m_r - m_g|`.
pub fn blink_loss(ear_real: f64, ear_generated: f64) -> f64 {
    (ear_real - ear_generated).abs()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceLandmarks {
    pub left: EyeLandmarkSet,
    pub right: EyeLandmarkSet,
}

impl FaceLandmarks {
    /// Mean EAR of both eyes.
    pub fn ear(&self) -> Result<f64> {
        Ok(0.5 * (eye_aspect_ratio(&self.left)? + eye_aspect_ratio(&self.right)?))
    }

    /// Left eye then right eye, each p1..p6 as (x, y).
    pub fn to_flat(&self) -> [f64; FACE_LANDMARK_VALUES] {
        let mut out = [0.0; FACE_LANDMARK_VALUES];
        for (e, eye) in [self.left, self.right].iter().enumerate() {
            for (k, pt) in eye.points.iter().enumerate() {
                out[e * 12 + k * 2] = pt[0];
                out[e * 12 + k * 2 + 1] = pt[1];
            }
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != FACE_LANDMARK_VALUES {
            bail_shape!(
                "expected {FACE_LANDMARK_VALUES} landmark values, got {}",
                v.len()
            );
        }
        let eye = |o: usize| {
            EyeLandmarkSet::new(std::array::from_fn(|k| [v[o + 2 * k], v[o + 2 * k + 1]]))
        };
        Ok(Self {
            left: eye(0),
            right: eye(12),
        })
    }

    /// Coordinates of the same points after resizing the frame from
    /// `from` to `to` (both `(height, width)`).
    pub fn rescaled(&self, from: (usize, usize), to: (usize, usize)) -> Self {
        let (sy, sx) = (to.0 as f64 / from.0 as f64, to.1 as f64 / from.1 as f64);
        let f = |p: [f64; 2]| [p[0] * sx, p[1] * sy];
        Self {
            left: self.left.map(f),
            right: self.right.map(f),
        }
    }

    /// Coordinates divided by the frame size, so that they lie in [0, 1].
    pub fn normalized(&self, height: usize, width: usize) -> Self {
        let f = |p: [f64; 2]| [p[0] / width as f64, p[1] / height as f64];
        Self {
            left: self.left.map(f),
            right: self.right.map(f),
        }
    }
}

/// Differentiable mean-of-both-eyes EAR of `[N, 24]` landmark rows, `-> [N]`.
/// Distances carry a tiny epsilon under the square root so that closed eyes
/// keep a finite gradient.
pub fn ear_tensor(points: &Tensor) -> Result<Tensor> {
    let (n, d) = points.dims2()?;
    if d != FACE_LANDMARK_VALUES {
        bail_shape!("landmark rows must have {FACE_LANDMARK_VALUES} values, got {d}");
    }
    let p = points.reshape(&[n, 2, 6, 2])?;
    let pt = |k: usize| p.narrow(2, k, 1);
    let dist = |a: usize, b: usize| -> Result<Tensor> {
        Ok(pt(a)?
            .sub(&pt(b)?)?
            .sqr()
            .sum_keepdim(&[3])?
            .affine(1.0, 1e-12)
            .sqrt())
    };
    let ear = dist(1, 5)?.add(&dist(2, 4)?)?.div(&dist(0, 3)?)?;
    ear.mean_keepdim(&[1])?.reshape(&[n])
}

pub trait LandmarkProvider {
    fn name(&self) -> &str;
    /// Landmarks of frame `index` in pixel coordinates.
    fn landmarks(&self, frame: &Image, index: usize) -> Result<FaceLandmarks>;
}

/// Per-frame landmarks from a text file: one line of 24 numbers per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SidecarLandmarkProvider {
    frames: Vec<FaceLandmarks>,
}

impl SidecarLandmarkProvider {
    pub fn new(frames: Vec<FaceLandmarks>) -> Self {
        Self { frames }
    }

    pub fn frames(&self) -> &[FaceLandmarks] {
        &self.frames
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut frames = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::Validation(format!("{}:{}: bad number", path.display(), n + 1))
                })?;
            frames
                .push(FaceLandmarks::from_flat(&v).map_err(|e| {
                    Error::Validation(format!("{}:{}: {e}", path.display(), n + 1))
                })?);
        }
        Ok(Self { frames })
    }

    pub fn render(frames: &[FaceLandmarks]) -> String {
        let mut s = String::new();
        for f in frames {
            let row: Vec<String> = f.to_flat().iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn save(frames: &[FaceLandmarks], path: &Path) -> Result<()> {
        fs::write(path, Self::render(frames)).map_err(|e| Error::io(path, e))
    }
}

impl LandmarkProvider for SidecarLandmarkProvider {
    fn name(&self) -> &str {
        "sidecar"
    }

    fn landmarks(&self, _frame: &Image, index: usize) -> Result<FaceLandmarks> {
        self.frames
            .get(index)
            .copied()
            .ok_or_else(|| Error::Provider(format!("no landmarks recorded for frame {index}")))
    }
}

/// Fixed eye boxes in normalized `(x0, y0, x1, y1)` coordinates; the eye is
/// the dark blob inside each box. The defaults match the synthetic faces of
/// [`crate::toy`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeRegionLandmarkProvider {
    pub left_box: [f64; 4],
    pub right_box: [f64; 4],
}

impl Default for EyeRegionLandmarkProvider {
    fn default() -> Self {
        Self {
            left_box: [0.22, 0.26, 0.46, 0.48],
            right_box: [0.54, 0.26, 0.78, 0.48],
        }
    }
}

impl EyeRegionLandmarkProvider {
    fn eye(&self, frame: &Image, bx: [f64; 4]) -> Result<EyeLandmarkSet> {
        let (h, w) = frame.dims();
        let luma = frame.luma();
        let x0 = (bx[0] * w as f64).floor() as usize;
        let x1 = ((bx[2] * w as f64).ceil() as usize).min(w);
        let y0 = (bx[1] * h as f64).floor() as usize;
        let y1 = ((bx[3] * h as f64).ceil() as usize).min(h);
        let vals: Vec<f64> = (y0..y1)
            .flat_map(|y| (x0..x1).map(move |x| (y, x)))
            .map(|(y, x)| luma[y * w + x])
            .collect();
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if !(hi - lo > 0.1) {
            return Err(Error::Provider("no eye contrast in region".into()));
        }
        let thr = 0.5 * (lo + hi);
        let dark = |y: usize, x: usize| luma[y * w + x] < thr;
        let cols: Vec<usize> = (x0..x1).filter(|&x| (y0..y1).any(|y| dark(y, x))).collect();
        let (cx0, cx1) = match (cols.first(), cols.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Provider("no eye pixels in region".into())),
        };
        let rows: Vec<usize> = (y0..y1)
            .filter(|&y| (cx0..=cx1).any(|x| dark(y, x)))
            .collect();
        let cy = (rows[0] + rows[rows.len() - 1]) as f64 / 2.0 + 0.5;
        // Vertical extent of the blob in a column, in pixels (at least zero).
        let extent = |x: usize| -> (f64, f64) {
            let ys: Vec<usize> = (y0..y1).filter(|&y| dark(y, x)).collect();
            match (ys.first(), ys.last()) {
                (Some(&a), Some(&b)) => (a as f64 + 0.5, b as f64 + 0.5),
                _ => (cy, cy),
            }
        };
        let third = cx0 + (cx1 - cx0) / 3;
        let two_thirds = cx0 + 2 * (cx1 - cx0) / 3;
        let (t1, b1) = extent(third);
        let (t2, b2) = extent(two_thirds);
        Ok(EyeLandmarkSet::new([
            [cx0 as f64, cy],
            [third as f64 + 0.5, t1],
            [two_thirds as f64 + 0.5, t2],
            [cx1 as f64 + 1.0, cy],
            [two_thirds as f64 + 0.5, b2],
            [third as f64 + 0.5, b1],
        ]))
    }
}

impl LandmarkProvider for EyeRegionLandmarkProvider {
    fn name(&self) -> &str {
        "eye-region"
    }

    fn landmarks(&self, frame: &Image, _index: usize) -> Result<FaceLandmarks> {
        Ok(FaceLandmarks {
            left: self.eye(frame, self.left_box)?,
            right: self.eye(frame, self.right_box)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hexagon() -> EyeLandmarkSet {
        EyeLandmarkSet::new([
            [0.0, 0.0],
            [1.0, 1.0],
            [3.0, 1.0],
            [4.0, 0.0],
            [3.0, -1.0],
            [1.0, -1.0],
        ])
    }

    #[test]
    fn symmetric_hexagon_has_unit_ear() {
        assert_eq!(eye_aspect_ratio(&hexagon()).unwrap(), 1.0);
    }

    #[test]
    fn closed_eye_has_zero_ear() {
        let e = EyeLandmarkSet::new([
            [0.0, 0.0],
            [1.0, 0.0],
            [3.0, 0.0],
            [4.0, 0.0],
            [3.0, 0.0],
            [1.0, 0.0],
        ]);
        assert_eq!(eye_aspect_ratio(&e).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_corners_are_rejected() {
        let e = EyeLandmarkSet::new([[1.0, 1.0]; 6]);
        assert!(eye_aspect_ratio(&e).is_err());
    }

    #[test]
    fn blink_loss_values() {
        assert_eq!(blink_loss(0.3, 0.3), 0.0);
        assert!((blink_loss(0.3, 0.25) - 0.05).abs() < 1e-12);
        assert_eq!(blink_loss(0.3, 0.25), blink_loss(0.25, 0.3));
    }

    #[test]
    fn tensor_ear_matches_scalar() {
        let f = FaceLandmarks {
            left: hexagon(),
            right: hexagon().map(|p| [p[0] * 0.5 + 10.0, p[1] * 0.3 + 2.0]),
        };
        let t = Tensor::new(f.to_flat().to_vec(), &[1, 24]).unwrap();
        let e = ear_tensor(&t).unwrap().to_vec()[0];
        assert!((e - f.ear().unwrap()).abs() < 1e-9);
        assert_eq!(FaceLandmarks::from_flat(&f.to_flat()).unwrap(), f);
    }

    #[test]
    fn eye_region_provider_tracks_openness() {
        let draw = |open: f64| {
            Image::from_fn(64, 64, |y, x| {
                let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
                // Lens-shaped eye that degrades to a one-pixel line when shut.
                let in_eye = |cx: f64| {
                    let u = (xf - cx) / 6.0;
                    u.abs() <= 1.0 && (yf - 23.0).abs() <= open * (1.0 - u * u).sqrt() + 0.5
                };
                if in_eye(21.0) || in_eye(43.0) {
                    [0.05; 3]
                } else {
                    [0.85, 0.7, 0.6]
                }
            })
        };
        let p = EyeRegionLandmarkProvider::default();
        let open = p.landmarks(&draw(3.0), 0).unwrap().ear().unwrap();
        let shut = p.landmarks(&draw(0.0), 0).unwrap().ear().unwrap();
        assert!(open > 0.3 && shut < 0.2, "open {open}, shut {shut}");
    }

    proptest! {
        #[test]
        fn ear_is_similarity_invariant(
            theta in -3.2f64..3.2, s in 0.05f64..50.0, tx in -100.0f64..100.0, ty in -100.0f64..100.0,
            jitter in proptest::collection::vec(-0.4f64..0.4, 12),
        ) {
            let base = EyeLandmarkSet::new(std::array::from_fn(|k| {
                let p = hexagon().points[k];
                [p[0] + jitter[2 * k], p[1] + jitter[2 * k + 1]]
            }));
            let (c, si) = (theta.cos(), theta.sin());
            let moved = base.map(|p| [s * (c * p[0] - si * p[1]) + tx, s * (si * p[0] + c * p[1]) + ty]);
            let a = eye_aspect_ratio(&base).unwrap();
            let b = eye_aspect_ratio(&moved).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
