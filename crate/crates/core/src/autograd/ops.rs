//! Elementwise, reduction, shape and matrix operations with their adjoints.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{bail_shape, Result};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r {
            a[i + a.len() - r]
        } else {
            1
        };
        let db = if i + b.len() >= r {
            b[i + b.len() - r]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => bail_shape!("cannot broadcast {:?} with {:?}", a, b),
        };
    }
    Ok(out)
}

/// For every element of `dst` (row-major), the linear index of the element of
/// `src` it reads from under right-aligned broadcasting.
pub(crate) fn broadcast_index_map(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let r = dst.len();
    let off = r - src.len();
    let mut strides = vec![0usize; r];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + off] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let n: usize = dst.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut cur = 0usize;
    for _ in 0..n {
        out.push(cur);
        let mut ax = r;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < dst[ax] {
                break;
            }
            cur -= strides[ax] * dst[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `C (+)= op(A) · op(B)` with `op(A)` of shape `[m, k]` and `op(B)` of shape
/// `[k, n]`; `ta`/`tb` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover the strided extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    fn binary(
        &self,
        rhs: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        da: impl Fn(f64, f64, f64) -> f64 + 'static,
        db: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let shape = broadcast_shape(self.shape(), rhs.shape())?;
        let ia = (self.shape() != shape.as_slice())
            .then(|| Rc::new(broadcast_index_map(self.shape(), &shape)));
        let ib = (rhs.shape() != shape.as_slice())
            .then(|| Rc::new(broadcast_index_map(rhs.shape(), &shape)));
        let n: usize = shape.iter().product();
        let (ad, bd) = (self.data(), rhs.data());
        let at = |k: usize| ia.as_ref().map_or(k, |m| m[k]);
        let bt = |k: usize| ib.as_ref().map_or(k, |m| m[k]);
        let data: Vec<f64> = (0..n).map(|k| f(ad[at(k)], bd[bt(k)])).collect();

        let (a, b) = (self.clone(), rhs.clone());
        let (need_a, need_b) = (self.requires_grad(), rhs.requires_grad());
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, out| {
                let (ad, bd) = (a.data(), b.data());
                let at = |k: usize| ia.as_ref().map_or(k, |m| m[k]);
                let bt = |k: usize| ib.as_ref().map_or(k, |m| m[k]);
                let ga = need_a.then(|| {
                    let mut ga = vec![0.0; ad.len()];
                    for k in 0..g.len() {
                        let (i, j) = (at(k), bt(k));
                        ga[i] += g[k] * da(ad[i], bd[j], out[k]);
                    }
                    ga
                });
                let gb = need_b.then(|| {
                    let mut gb = vec![0.0; bd.len()];
                    for k in 0..g.len() {
                        let (i, j) = (at(k), bt(k));
                        gb[j] += g[k] * db(ad[i], bd[j], out[k]);
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, |a, b| a + b, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, |a, b| a - b, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, |a, b| a / b, |_, b, _| 1.0 / b, |a, b, _| -a / (b * b))
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, out| {
                let xd = x.data();
                vec![Some(
                    g.iter()
                        .zip(xd)
                        .zip(out)
                        .map(|((g, &x), &y)| g * df(x, y))
                        .collect(),
                )]
            }),
        )
    }

    /// `self * mul + add`.
    pub fn affine(&self, mul: f64, add: f64) -> Tensor {
        self.unary(move |x| x * mul + add, move |_, _| mul)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.affine(s, 0.0)
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn sqr(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Tensor {
        self.unary(
            |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
            |x, _| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
        )
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            if a >= shape.len() {
                bail_shape!("axis {} out of range for {:?}", a, self.shape());
            }
            shape[a] = 1;
        }
        let map = Rc::new(broadcast_index_map(&shape, self.shape()));
        let mut data = vec![0.0; shape.iter().product()];
        for (k, &v) in self.data().iter().enumerate() {
            data[map[k]] += v;
        }
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(map.iter().map(|&i| g[i]).collect())]),
        ))
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        Ok(self.sum_keepdim(axes)?.scale(1.0 / count as f64))
    }

    /// Maximum over `axes`; ties route the gradient to the first maximum.
    pub fn max_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            if a >= shape.len() {
                bail_shape!("axis {} out of range for {:?}", a, self.shape());
            }
            shape[a] = 1;
        }
        let map = broadcast_index_map(&shape, self.shape());
        let n_out: usize = shape.iter().product();
        let mut data = vec![f64::NEG_INFINITY; n_out];
        let mut arg = vec![usize::MAX; n_out];
        for (k, &v) in self.data().iter().enumerate() {
            let o = map[k];
            if arg[o] == usize::MAX || v > data[o] {
                data[o] = v;
                arg[o] = k;
            }
        }
        let n_in = self.numel();
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; n_in];
                for (o, &k) in arg.iter().enumerate() {
                    gi[k] += g[o];
                }
                vec![Some(gi)]
            }),
        ))
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.sum_keepdim(&axes)?.reshape(&[])
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            bail_shape!("mean of an empty tensor");
        }
        Ok(self.sum_all()?.scale(1.0 / self.numel() as f64))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            bail_shape!("cannot reshape {:?} into {:?}", self.shape(), shape);
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r
            || perm
                .iter()
                .any(|&p| p >= r || std::mem::replace(&mut seen[p], true))
        {
            bail_shape!("invalid permutation {:?} for {:?}", perm, self.shape());
        }
        let in_strides = strides_of(self.shape());
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; r];
        let mut cur = 0usize;
        for _ in 0..n {
            map.push(cur);
            let mut ax = r;
            while ax > 0 {
                ax -= 1;
                idx[ax] += 1;
                cur += src_strides[ax];
                if idx[ax] < shape[ax] {
                    break;
                }
                cur -= src_strides[ax] * shape[ax];
                idx[ax] = 0;
            }
        }
        let xd = self.data();
        let data = map.iter().map(|&i| xd[i]).collect();
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; n];
                for (k, &i) in map.iter().enumerate() {
                    gi[i] = g[k];
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            bail_shape!(
                "narrow({axis}, {start}, {len}) out of range for {:?}",
                shape
            );
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let xd = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let n_in = self.numel();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; n_in];
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    let gb = o * len * inner;
                    gi[base..base + len * inner].copy_from_slice(&g[gb..gb + len * inner]);
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn cat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let Some(first) = tensors.first() else {
            bail_shape!("cat of zero tensors");
        };
        let r = first.rank();
        if axis >= r {
            bail_shape!("cat axis {axis} out of range for rank {r}");
        }
        for t in tensors {
            let ok = t.rank() == r && (0..r).all(|i| i == axis || t.shape()[i] == first.shape()[i]);
            if !ok {
                bail_shape!(
                    "cat shape mismatch: {:?} vs {:?} on axis {axis}",
                    first.shape(),
                    t.shape()
                );
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let dims: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &d) in tensors.iter().zip(&dims) {
                let base = o * d * inner;
                data.extend_from_slice(&t.data()[base..base + d * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let dims_c = dims.clone();
        Ok(Tensor::from_op(
            data,
            shape,
            tensors.to_vec(),
            Box::new(move |g, _| {
                let mut outs: Vec<Vec<f64>> = dims_c
                    .iter()
                    .map(|&d| Vec::with_capacity(outer * d * inner))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (i, &d) in dims_c.iter().enumerate() {
                        outs[i].extend_from_slice(&g[off..off + d * inner]);
                        off += d * inner;
                    }
                }
                outs.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            bail_shape!("matmul {:?} x {:?}", self.shape(), rhs.shape());
        }
        let mut data = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.data(),
            false,
            rhs.data(),
            false,
            &mut data,
            false,
        );
        let (a, b) = (self.clone(), rhs.clone());
        let (need_a, need_b) = (self.requires_grad(), rhs.requires_grad());
        Ok(Tensor::from_op(
            data,
            vec![m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _| {
                let ga = need_a.then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, b.data(), true, &mut ga, false);
                    ga
                });
                let gb = need_b.then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g, false, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor> {
        self.dims2()?;
        self.permute(&[1, 0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 1]).unwrap(), vec![2, 4, 3]);
        assert!(broadcast_shape(&[2, 3], &[4]).is_err());
        assert_eq!(broadcast_shape(&[], &[3]).unwrap(), vec![3]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let a = Tensor::variable(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::variable(vec![10.0, 20.0, 30.0], &[3]).unwrap();
        let y = a.add(&b).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let g = y.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&b).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn permute_and_narrow() {
        let x = Tensor::new((0..6).map(|v| v as f64).collect(), &[2, 3]).unwrap();
        let t = x.t().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let n = x.narrow(1, 1, 2).unwrap();
        assert_eq!(n.data(), &[1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn cat_roundtrip_through_narrow() {
        let a = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = Tensor::new(vec![3.0, 4.0, 5.0, 6.0], &[1, 4]).unwrap();
        let c = Tensor::cat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.narrow(1, 2, 4).unwrap().data(), b.data());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn max_routes_to_first_argmax() {
        let x = Tensor::variable(vec![1.0, 5.0, 5.0, 2.0], &[1, 4]).unwrap();
        let m = x.max_keepdim(&[1]).unwrap();
        assert_eq!(m.data(), &[5.0]);
        let g = m.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
