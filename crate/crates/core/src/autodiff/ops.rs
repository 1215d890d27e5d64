//! Elementwise, broadcast and reduction operations.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, IxDyn};

fn non_batch_len(shape: &[usize]) -> usize {
    shape.iter().skip(1).product::<usize>()
}

/// Elementwise map on the flat slice when contiguous.
pub(crate) fn map1<F: Scalar>(a: &ArrayD<F>, f: impl Fn(F) -> F) -> ArrayD<F> {
    match a.as_slice() {
        Some(s) => {
            ArrayD::from_shape_vec(a.raw_dim(), s.iter().map(|&x| f(x)).collect()).unwrap()
        }
        None => a.mapv(f),
    }
}

/// Elementwise combine on the flat slices; dynamic-dim zip is much slower.
pub(crate) fn zip2<F: Scalar>(
    a: &ArrayD<F>,
    b: &ArrayD<F>,
    f: impl Fn(F, F) -> F,
) -> ArrayD<F> {
    match (a.as_slice(), b.as_slice()) {
        (Some(sa), Some(sb)) => {
            let v: Vec<F> = sa.iter().zip(sb.iter()).map(|(&x, &y)| f(x, y)).collect();
            ArrayD::from_shape_vec(a.raw_dim(), v).unwrap()
        }
        _ => {
            let mut out = a.clone();
            out.zip_mut_with(b, |x, &y| *x = f(*x, y));
            out
        }
    }
}

impl<F: Scalar> Tensor<F> {
    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let value = zip2(self.value(), other.value(), |x, y| x + y);
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let value = zip2(self.value(), other.value(), |x, y| x - y);
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.clone()), Some(-g.clone())]),
        )
    }

    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let value = zip2(self.value(), other.value(), |x, y| x * y);
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                vec![
                    Some(zip2(g, parents[1].value(), |gv, y| gv * y)),
                    Some(zip2(g, parents[0].value(), |gv, x| gv * x)),
                ]
            }),
        )
    }

    pub fn div(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.shape(), other.shape(), "div: shape mismatch");
        let value = zip2(self.value(), other.value(), |x, y| x / y);
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].value();
                let b = parents[1].value();
                let da = zip2(g, b, |gv, bv| gv / bv);
                let db = zip2(&zip2(g, a, |gv, av| gv * av), b, |n, bv| -n / (bv * bv));
                vec![Some(da), Some(db)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor<F> {
        Tensor::from_op(
            -self.value().clone(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(-g.clone())]),
        )
    }

    pub fn scale(&self, c: F) -> Tensor<F> {
        Tensor::from_op(
            map1(self.value(), |v| v * c),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.mapv(|v| v * c))]),
        )
    }

    pub fn add_scalar(&self, c: F) -> Tensor<F> {
        Tensor::from_op(
            map1(self.value(), |v| v + c),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.clone())]),
        )
    }

    pub fn relu(&self) -> Tensor<F> {
        let value = map1(self.value(), |v| v.max(F::zero()));
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, parents| {
                let x = parents[0].value();
                let mut dg = g.clone();
                dg.zip_mut_with(x, |d, &v| {
                    if v <= F::zero() {
                        *d = F::zero();
                    }
                });
                vec![Some(dg)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        let value = map1(self.value(), |v| F::one() / (F::one() + (-v).exp()));
        Tensor::from_op(
            value.clone(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dg = g.clone();
                dg.zip_mut_with(&value, |d, &s| *d = *d * s * (F::one() - s));
                vec![Some(dg)]
            }),
        )
    }

    pub fn sqrt(&self) -> Tensor<F> {
        let value = self.value().mapv(|v| v.sqrt());
        Tensor::from_op(
            value.clone(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let half = F::of_f64(0.5);
                let mut dg = g.clone();
                dg.zip_mut_with(&value, |d, &s| *d = *d * half / s);
                vec![Some(dg)]
            }),
        )
    }

    /// y = 1 / sqrt(x + eps), used by the normalization layers.
    pub fn rsqrt_eps(&self, eps: F) -> Tensor<F> {
        let value = map1(self.value(), |v| F::one() / (v + eps).sqrt());
        Tensor::from_op(
            value.clone(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let half = F::of_f64(-0.5);
                let mut dg = g.clone();
                dg.zip_mut_with(&value, |d, &y| *d = *d * half * y * y * y);
                vec![Some(dg)]
            }),
        )
    }

    pub fn ln(&self) -> Tensor<F> {
        let value = self.value().mapv(|v| v.ln());
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, parents| {
                vec![Some(zip2(g, parents[0].value(), |gv, x| gv / x))]
            }),
        )
    }

    /// Clamp with straight-through gradient inside the interval.
    pub fn clip(&self, lo: F, hi: F) -> Tensor<F> {
        let value = self.value().mapv(|v| v.max(lo).min(hi));
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].value();
                let mut dg = g.clone();
                dg.zip_mut_with(x, |d, &v| {
                    if v < lo || v > hi {
                        *d = F::zero();
                    }
                });
                vec![Some(dg)]
            }),
        )
    }

    /// Broadcast a 0-d tensor or a `(B,)` tensor to `target` (leading axis
    /// must match in the `(B,)` case). Gradient sums over broadcast axes.
    pub fn broadcast_to(&self, target: &[usize]) -> Tensor<F> {
        let src_shape: Vec<usize> = self.shape().to_vec();
        let target: Vec<usize> = target.to_vec();
        let value = match src_shape.len() {
            0 => ArrayD::from_elem(IxDyn(&target), self.scalar()),
            1 => {
                let b = src_shape[0];
                assert_eq!(b, target[0], "broadcast_to: batch axis mismatch");
                let n = non_batch_len(&target);
                let mut out = ArrayD::zeros(IxDyn(&target));
                {
                    let mut flat = out.view_mut().into_shape((b, n)).unwrap();
                    for (i, &v) in self.value().iter().enumerate() {
                        flat.row_mut(i).fill(v);
                    }
                }
                out
            }
            _ => panic!("broadcast_to supports 0-d and (B,) sources"),
        };
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let dg = match src_shape.len() {
                    0 => ArrayD::from_elem(IxDyn(&[]), g.sum()),
                    _ => {
                        let b = src_shape[0];
                        let n = non_batch_len(g.shape());
                        let flat = g.view().into_shape((b, n)).unwrap();
                        flat.sum_axis(Axis(1)).into_dyn()
                    }
                };
                vec![Some(dg)]
            }),
        )
    }

    /// Per-batch-element mean over all non-batch axes: `(B, ...) -> (B,)`.
    pub fn mean_non_batch(&self) -> Tensor<F> {
        let b = self.shape()[0];
        let n = non_batch_len(self.shape());
        assert!(n > 0, "mean_non_batch: empty non-batch extent");
        let flat = self.value().view().into_shape((b, n)).unwrap();
        let inv = F::of_f64(1.0 / n as f64);
        let value = flat.sum_axis(Axis(1)).mapv(|v| v * inv).into_dyn();
        let shape: Vec<usize> = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = ArrayD::zeros(IxDyn(&shape));
                {
                    let mut flat = out.view_mut().into_shape((shape[0], n)).unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        flat.row_mut(i).fill(gv * inv);
                    }
                }
                vec![Some(out)]
            }),
        )
    }

    /// Global average pooling: `(B, H, W, C) -> (B, C)` mean over H and W.
    pub fn spatial_mean(&self) -> Tensor<F> {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "spatial_mean expects (B,H,W,C)");
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let inv = F::of_f64(1.0 / (h * w) as f64);
        let v4 = self.value().view().into_shape((b, h * w, c)).unwrap();
        let value = v4.sum_axis(Axis(1)).mapv(|v| v * inv).into_dyn();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let g2 = g.view().into_shape((b, c)).unwrap();
                let mut out = ArrayD::zeros(IxDyn(&[b, h, w, c]));
                {
                    let mut o3 = out.view_mut().into_shape((b, h * w, c)).unwrap();
                    for bi in 0..b {
                        for ci in 0..c {
                            let gv = g2[(bi, ci)] * inv;
                            for p in 0..h * w {
                                o3[(bi, p, ci)] = gv;
                            }
                        }
                    }
                }
                vec![Some(out)]
            }),
        )
    }

    /// Per-channel mean over batch and space: `(B, H, W, C) -> (C,)`.
    pub fn mean_channels(&self) -> Tensor<F> {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "mean_channels expects (B,H,W,C)");
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let m = b * h * w;
        let inv = F::of_f64(1.0 / m as f64);
        let v2 = self.value().view().into_shape((m, c)).unwrap();
        let value = v2.sum_axis(Axis(0)).mapv(|v| v * inv).into_dyn();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = ArrayD::zeros(IxDyn(&[b, h, w, c]));
                {
                    let mut o2 = out.view_mut().into_shape((m, c)).unwrap();
                    for ci in 0..c {
                        let gv = g[ci] * inv;
                        o2.column_mut(ci).fill(gv);
                    }
                }
                vec![Some(out)]
            }),
        )
    }

    /// Broadcast `(C,)` over `(B, H, W, C)`.
    pub fn broadcast_channel(&self, target: &[usize]) -> Tensor<F> {
        let c = self.shape()[0];
        let target: Vec<usize> = target.to_vec();
        assert_eq!(target.len(), 4);
        assert_eq!(c, target[3], "broadcast_channel: channel axis mismatch");
        let m: usize = target[0] * target[1] * target[2];
        let mut value = ArrayD::zeros(IxDyn(&target));
        {
            let mut v2 = value.view_mut().into_shape((m, c)).unwrap();
            for (ci, &v) in self.value().iter().enumerate() {
                v2.column_mut(ci).fill(v);
            }
        }
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let g2 = g.view().into_shape((m, c)).unwrap();
                vec![Some(g2.sum_axis(Axis(0)).into_dyn())]
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = self.value().len();
        let inv = F::of_f64(1.0 / n as f64);
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum() * inv);
        let shape = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gv = *g.iter().next().unwrap() * inv;
                vec![Some(ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        let shape = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gv = *g.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    /// Add a `(C,)` bias over the last axis of a rank-2 or rank-4 tensor.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Tensor<F> {
        let c = *self.shape().last().unwrap();
        assert_eq!(bias.shape(), [c], "add_bias: bias shape mismatch");
        let m = self.value().len() / c;
        let mut value = self.value().clone();
        {
            let mut v2 = value.view_mut().into_shape((m, c)).unwrap();
            for (ci, &bv) in bias.value().iter().enumerate() {
                v2.column_mut(ci).mapv_inplace(|v| v + bv);
            }
        }
        Tensor::from_op(
            value,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _| {
                let g2 = g.view().into_shape((m, c)).unwrap();
                vec![Some(g.clone()), Some(g2.sum_axis(Axis(0)).into_dyn())]
            }),
        )
    }
}
