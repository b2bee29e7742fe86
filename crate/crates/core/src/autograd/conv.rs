//! Spatial operations on NCHW tensors.

use std::rc::Rc;

use super::ops::gemm;
use super::tensor::Tensor;
use crate::error::{bail_shape, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.oh * g.ow;
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src =
                        &x[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        *v = if ix >= 0 && ix < g.w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let p = g.oh * g.ow;
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            x[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation of `[N, C, H, W]` with weights `[O, C, kh, kw]`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        let (o, c2, kh, kw) = weight.dims4()?;
        if c != c2 {
            bail_shape!(
                "conv2d input has {c} channels, weight expects {c2} ({:?})",
                weight.shape()
            );
        }
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        if sh == 0 || sw == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
            bail_shape!(
                "conv2d kernel {kh}x{kw} stride {stride:?} does not fit input {h}x{w} pad {padding:?}"
            );
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        let g = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            oh,
            ow,
        };
        let ckk = c * kh * kw;
        let p = oh * ow;
        let mut cols = vec![0.0; ckk * p];
        let mut out = vec![0.0; n * o * p];
        let xd = self.data();
        for b in 0..n {
            im2col(&xd[b * c * h * w..(b + 1) * c * h * w], &g, &mut cols);
            gemm(
                o,
                ckk,
                p,
                weight.data(),
                false,
                &cols,
                false,
                &mut out[b * o * p..(b + 1) * o * p],
                false,
            );
        }
        let (x, wt) = (self.clone(), weight.clone());
        let (need_x, need_w) = (self.requires_grad(), weight.requires_grad());
        Ok(Tensor::from_op(
            out,
            vec![n, o, oh, ow],
            vec![self.clone(), weight.clone()],
            Box::new(move |gout, _| {
                let xd = x.data();
                let mut cols = vec![0.0; ckk * p];
                let mut gx = need_x.then(|| vec![0.0; n * c * h * w]);
                let mut gw = need_w.then(|| vec![0.0; o * ckk]);
                for b in 0..n {
                    let gb = &gout[b * o * p..(b + 1) * o * p];
                    if let Some(gw) = gw.as_mut() {
                        im2col(&xd[b * c * h * w..(b + 1) * c * h * w], &g, &mut cols);
                        gemm(o, p, ckk, gb, false, &cols, true, gw, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(ckk, o, p, wt.data(), true, gb, false, &mut cols, false);
                        col2im(&cols, &g, &mut gx[b * c * h * w..(b + 1) * c * h * w]);
                    }
                }
                vec![gx, gw]
            }),
        ))
    }

    /// Non-overlapping `k x k` average pooling; spatial dims must divide by `k`.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if k == 0 || h % k != 0 || w % k != 0 {
            bail_shape!("avg_pool2d({k}) needs spatial dims divisible by {k}, got {h}x{w}");
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let (oh, ow) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let xd = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for nc in 0..n * c {
            let src = &xd[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    dst[(y / k) * ow + x / k] += src[y * w + x];
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    for y in 0..h {
                        for x in 0..w {
                            gi[nc * h * w + y * w + x] =
                                g[nc * oh * ow + (y / k) * ow + x / k] * inv;
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    pub fn upsample_nearest2d(&self, factor: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if factor == 0 {
            bail_shape!("upsample factor must be positive");
        }
        let (oh, ow) = (h * factor, w * factor);
        let xd = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for nc in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    out[nc * oh * ow + y * ow + x] = xd[nc * h * w + (y / factor) * w + x / factor];
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    for y in 0..oh {
                        for x in 0..ow {
                            gi[nc * h * w + (y / factor) * w + x / factor] +=
                                g[nc * oh * ow + y * ow + x];
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Bilinear resize with half-pixel centers (no corner alignment).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if out_h == 0 || out_w == 0 {
            bail_shape!("resize to an empty size {out_h}x{out_w}");
        }
        let ys = Rc::new(interp_taps(h, out_h));
        let xs = Rc::new(interp_taps(w, out_w));
        let xd = self.data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for nc in 0..n * c {
            let src = &xd[nc * h * w..(nc + 1) * h * w];
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                    out[nc * out_h * out_w + oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![n, c, out_h, out_w],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    let dst = &mut gi[nc * h * w..(nc + 1) * h * w];
                    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                            let gv = g[nc * out_h * out_w + oy * out_w + ox];
                            dst[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                            dst[y0 * w + x1] += gv * (1.0 - wy) * wx;
                            dst[y1 * w + x0] += gv * wy * (1.0 - wx);
                            dst[y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Resize to `out_h x out_w`: exact block averaging when the input is an
    /// integer multiple of the target, bilinear otherwise.
    pub fn resize_to(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (_, _, h, w) = self.dims4()?;
        if h == out_h && w == out_w {
            return Ok(self.clone());
        }
        if h % out_h == 0 && w % out_w == 0 && h / out_h == w / out_w {
            return self.avg_pool2d(h / out_h);
        }
        self.resize_bilinear(out_h, out_w)
    }
}

fn interp_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &[f64],
        (n, c, h, w): (usize, usize, usize, usize),
        wt: &[f64],
        (o, kh, kw): (usize, usize, usize),
        s: usize,
        p: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (w + 2 * p - kw) / s + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += x
                                            [((b * c + ci) * h + iy as usize) * w + ix as usize]
                                            * wt[((oc * c + ci) * kh + ki) * kw + kj];
                                    }
                                }
                            }
                        }
                        out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        let x: Vec<f64> = (0..2 * 3 * 7 * 6)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let w: Vec<f64> = (0..4 * 3 * 3 * 3)
            .map(|i| ((i * 13) % 7) as f64 * 0.1)
            .collect();
        let xt = Tensor::new(x.clone(), &[2, 3, 7, 6]).unwrap();
        let wt = Tensor::new(w.clone(), &[4, 3, 3, 3]).unwrap();
        for (s, p) in [(1, 1), (2, 1), (2, 0)] {
            let got = xt.conv2d(&wt, (s, s), (p, p)).unwrap();
            let want = naive_conv(&x, (2, 3, 7, 6), &w, (4, 3, 3), s, p);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn avg_pool_twice_equals_pool_four() {
        let x = Tensor::new((0..64).map(|v| (v as f64).sin()).collect(), &[1, 1, 8, 8]).unwrap();
        let a = x.avg_pool2d(2).unwrap().avg_pool2d(2).unwrap();
        let b = x.avg_pool2d(4).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let x = Tensor::new((0..12).map(|v| v as f64).collect(), &[1, 1, 3, 4]).unwrap();
        assert_eq!(x.resize_bilinear(3, 4).unwrap().data(), x.data());
        let c = Tensor::full(0.7, &[1, 2, 5, 3]);
        let r = c.resize_bilinear(11, 9).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }
}
