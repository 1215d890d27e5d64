//! 2-D convolutions (im2col-backed), 2x2 transposed convolution and max pooling.
//!
//! Layout is channels-last throughout: activations are `(B, H, W, C)` and
//! kernels are `(KH, KW, Cin, Cout)`.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewD, Axis, IxDyn};

/// `(m,k) x (k,n)` product. For the narrow right-hand sides that dominate
/// this model (n up to a few dozen) a k-outer accumulation loop on the flat
/// slices beats the packing overhead of the general gemm; wide products
/// fall through to it.
pub(crate) fn matmul2<F: Scalar>(a: &ArrayView2<F>, b: &ArrayView2<F>) -> Array2<F> {
    matmul2_init(a, b, None)
}

/// Same, with an optional per-row initializer (a fused bias add).
pub(crate) fn matmul2_init<F: Scalar>(
    a: &ArrayView2<F>,
    b: &ArrayView2<F>,
    init: Option<&[F]>,
) -> Array2<F> {
    let (m, k) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(k, kb, "matmul2: inner dims");
    let (a_slice, b_slice) = (a.as_slice(), b.as_slice());
    if ((n > 48 && m > 1) || a_slice.is_none() || b_slice.is_none()) && init.is_none() {
        return a.dot(b);
    }
    let (sa, sb) = match (a_slice, b_slice) {
        (Some(sa), Some(sb)) => (sa, sb),
        _ => {
            let mut out = a.dot(b);
            if let Some(bias) = init {
                for mut row in out.rows_mut() {
                    for (y, &bv) in row.iter_mut().zip(bias) {
                        *y = *y + bv;
                    }
                }
            }
            return out;
        }
    };
    let mut out = Array2::<F>::zeros((m, n));
    let os = out.as_slice_mut().unwrap();
    for i in 0..m {
        let ar = &sa[i * k..(i + 1) * k];
        let yr = &mut os[i * n..(i + 1) * n];
        if let Some(bias) = init {
            yr.copy_from_slice(bias);
        }
        // four k-partial accumulators per output element break the
        // load-add-store dependency chain
        let mut kc = ar.chunks_exact(4);
        let mut bc = sb.chunks_exact(4 * n);
        for (aq, bq) in (&mut kc).zip(&mut bc) {
            let (a0, a1, a2, a3) = (aq[0], aq[1], aq[2], aq[3]);
            let (b0, rest) = bq.split_at(n);
            let (b1, rest) = rest.split_at(n);
            let (b2, b3) = rest.split_at(n);
            for j in 0..n {
                let s01 = a0 * b0[j] + a1 * b1[j];
                let s23 = a2 * b2[j] + a3 * b3[j];
                yr[j] = yr[j] + (s01 + s23);
            }
        }
        for (br, &av) in bc.remainder().chunks_exact(n).zip(kc.remainder()) {
            for (y, &bv) in yr.iter_mut().zip(br) {
                *y = *y + av * bv;
            }
        }
    }
    out
}

/// TF-style "same" padding: output size ceil(n / stride), excess on the
/// bottom/right.
fn same_pad(n: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = (n + stride - 1) / stride;
    let total = ((out - 1) * stride + k).saturating_sub(n);
    (out, total / 2)
}

fn im2col<F: Scalar>(
    x: &ArrayViewD<F>,
    kh: usize,
    kw: usize,
    stride: usize,
) -> (Array2<F>, usize, usize) {
    let (b, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, pad_t) = same_pad(h, kh, stride);
    let (ow, pad_l) = same_pad(w, kw, stride);
    let owned;
    let xs = match x.as_slice() {
        Some(s) => s,
        None => {
            owned = x.as_standard_layout().to_owned();
            owned.as_slice().unwrap()
        }
    };
    let mut cols = Array2::<F>::zeros((b * oh * ow, kh * kw * cin));
    let cs = cols.as_slice_mut().unwrap();
    let row_len = kh * kw * cin;
    for bi in 0..b {
        for ohi in 0..oh {
            for owi in 0..ow {
                let row = ((bi * oh + ohi) * ow + owi) * row_len;
                for khi in 0..kh {
                    let ih = (ohi * stride + khi) as isize - pad_t as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kwi in 0..kw {
                        let iw = (owi * stride + kwi) as isize - pad_l as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + ih as usize) * w + iw as usize) * cin;
                        let dst = row + (khi * kw + kwi) * cin;
                        cs[dst..dst + cin].copy_from_slice(&xs[src..src + cin]);
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

fn col2im<F: Scalar>(
    dcols: &Array2<F>,
    shape: &[usize],
    kh: usize,
    kw: usize,
    stride: usize,
) -> ArrayD<F> {
    let (b, h, w, cin) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, pad_t) = same_pad(h, kh, stride);
    let (ow, pad_l) = same_pad(w, kw, stride);
    let mut dx = ArrayD::<F>::zeros(IxDyn(shape));
    let ds = dx.as_slice_mut().unwrap();
    let owned;
    let cs = match dcols.as_slice() {
        Some(s) => s,
        None => {
            owned = dcols.as_standard_layout().to_owned();
            owned.as_slice().unwrap()
        }
    };
    let row_len = kh * kw * cin;
    for bi in 0..b {
        for ohi in 0..oh {
            for owi in 0..ow {
                let row = ((bi * oh + ohi) * ow + owi) * row_len;
                for khi in 0..kh {
                    let ih = (ohi * stride + khi) as isize - pad_t as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kwi in 0..kw {
                        let iw = (owi * stride + kwi) as isize - pad_l as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let dst = ((bi * h + ih as usize) * w + iw as usize) * cin;
                        let src = row + (khi * kw + kwi) * cin;
                        for c in 0..cin {
                            ds[dst + c] += cs[src + c];
                        }
                    }
                }
            }
        }
    }
    dx
}

impl<F: Scalar> Tensor<F> {
    /// Same-padded convolution with the given stride.
    ///
    /// `weight` is `(KH, KW, Cin, Cout)`, `bias` is `(Cout,)`.
    pub fn conv2d(&self, weight: &Tensor<F>, bias: &Tensor<F>, stride: usize) -> Tensor<F> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input rank");
        assert_eq!(ws.len(), 4, "conv2d weight rank");
        assert_eq!(xs[3], ws[2], "conv2d: input channels vs kernel");
        let (kh, kw, cin, cout) = (ws[0], ws[1], ws[2], ws[3]);
        let (cols, oh, ow) = im2col(&self.value().view(), kh, kw, stride);
        let w2 = weight
            .value()
            .view()
            .into_shape((kh * kw * cin, cout))
            .unwrap();
        let y2 = matmul2_init(&cols.view(), &w2, bias.value().as_slice());
        let value = y2
            .into_shape(IxDyn(&[xs[0], oh, ow, cout]))
            .unwrap();
        let in_shape = xs.clone();
        Tensor::from_op(
            value,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents| {
                let rows = in_shape[0] * oh * ow;
                let g2 = g.view().into_shape((rows, cout)).unwrap();
                let w2 = parents[1]
                    .value()
                    .view()
                    .into_shape((kh * kw * cin, cout))
                    .unwrap();
                let db = g2.sum_axis(Axis(0)).into_dyn();
                let dw = cols
                    .t()
                    .dot(&g2)
                    .into_shape(IxDyn(&[kh, kw, cin, cout]))
                    .unwrap();
                let dcols = g2.dot(&w2.t());
                let dx = col2im(&dcols, &in_shape, kh, kw, stride);
                vec![Some(dx), Some(dw), Some(db)]
            }),
        )
    }

    /// Transposed convolution with a 2x2 kernel at stride 2: exact spatial
    /// doubling. `weight` is `(2, 2, Cin, Cout)`.
    pub fn conv_transpose2x2(&self, weight: &Tensor<F>, bias: &Tensor<F>) -> Tensor<F> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(ws[..2], [2, 2], "conv_transpose2x2 kernel");
        assert_eq!(xs[3], ws[2], "conv_transpose2x2: channels");
        let (b, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[3];
        // (Cin, 2*2*Cout) view of the kernel
        let w2: Array2<F> = {
            let p = weight.value().view().permuted_axes(vec![2, 0, 1, 3]);
            let mut m = Array2::zeros((cin, 4 * cout));
            for (i, v) in p.iter().enumerate() {
                m.as_slice_mut().unwrap()[i] = *v;
            }
            m
        };
        let x2 = self.value().view().into_shape((b * h * w, cin)).unwrap();
        let y = matmul2(&x2, &w2.view()); // (BHW, 4*Cout)
        let mut out = ArrayD::<F>::zeros(IxDyn(&[b, 2 * h, 2 * w, cout]));
        {
            let os = out.as_slice_mut().unwrap();
            let ys = y.as_slice().unwrap();
            for bi in 0..b {
                for i in 0..h {
                    for j in 0..w {
                        let row = ((bi * h + i) * w + j) * 4 * cout;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let dst =
                                    ((bi * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj) * cout;
                                let src = row + (di * 2 + dj) * cout;
                                os[dst..dst + cout].copy_from_slice(&ys[src..src + cout]);
                            }
                        }
                    }
                }
            }
        }
        for (ci, &bv) in bias.value().iter().enumerate() {
            out.index_axis_mut(Axis(3), ci).mapv_inplace(|v| v + bv);
        }
        Tensor::from_op(
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents| {
                // gather the 2x2 blocks back into (BHW, 4*Cout)
                let gs = g.as_slice().expect("standard layout");
                let mut gy = Array2::<F>::zeros((b * h * w, 4 * cout));
                {
                    let gys = gy.as_slice_mut().unwrap();
                    for bi in 0..b {
                        for i in 0..h {
                            for j in 0..w {
                                let row = ((bi * h + i) * w + j) * 4 * cout;
                                for di in 0..2 {
                                    for dj in 0..2 {
                                        let src = ((bi * 2 * h + 2 * i + di) * 2 * w
                                            + 2 * j
                                            + dj)
                                            * cout;
                                        let dst = row + (di * 2 + dj) * cout;
                                        gys[dst..dst + cout]
                                            .copy_from_slice(&gs[src..src + cout]);
                                    }
                                }
                            }
                        }
                    }
                }
                let x2 = parents[0]
                    .value()
                    .view()
                    .into_shape((b * h * w, cin))
                    .unwrap();
                let wv = parents[1].value();
                let w2: Array2<F> = {
                    let p = wv.view().permuted_axes(vec![2, 0, 1, 3]);
                    let mut m = Array2::zeros((cin, 4 * cout));
                    for (i, v) in p.iter().enumerate() {
                        m.as_slice_mut().unwrap()[i] = *v;
                    }
                    m
                };
                let dx = gy.dot(&w2.t()).into_shape(IxDyn(&[b, h, w, cin])).unwrap();
                let dw2 = x2.t().dot(&gy); // (Cin, 4*Cout)
                let mut dw = ArrayD::<F>::zeros(IxDyn(&[2, 2, cin, cout]));
                for ci in 0..cin {
                    for di in 0..2 {
                        for dj in 0..2 {
                            for co in 0..cout {
                                dw[[di, dj, ci, co]] = dw2[(ci, (di * 2 + dj) * cout + co)];
                            }
                        }
                    }
                }
                let g2 = g
                    .view()
                    .into_shape((b * 4 * h * w, cout))
                    .unwrap();
                let db = g2.sum_axis(Axis(0)).into_dyn();
                vec![Some(dx), Some(dw), Some(db)]
            }),
        )
    }

    /// 2x2 max pooling at stride 2. Spatial dims must be even.
    pub fn maxpool2(&self) -> Tensor<F> {
        let s = self.shape().to_vec();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2: odd spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.value().as_slice().expect("standard layout");
        let mut out = ArrayD::<F>::zeros(IxDyn(&[b, oh, ow, c]));
        let mut argmax = vec![0usize; b * oh * ow * c];
        {
            let os = out.as_slice_mut().unwrap();
            for bi in 0..b {
                for i in 0..oh {
                    for j in 0..ow {
                        for ci in 0..c {
                            let mut best = F::neg_infinity();
                            let mut best_idx = 0;
                            for di in 0..2 {
                                for dj in 0..2 {
                                    let idx =
                                        ((bi * h + 2 * i + di) * w + 2 * j + dj) * c + ci;
                                    if xs[idx] > best {
                                        best = xs[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            let o = ((bi * oh + i) * ow + j) * c + ci;
                            os[o] = best;
                            argmax[o] = best_idx;
                        }
                    }
                }
            }
        }
        let in_shape = s;
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = ArrayD::<F>::zeros(IxDyn(&in_shape));
                let ds = dx.as_slice_mut().unwrap();
                for (o, &gv) in g.as_slice().expect("standard layout").iter().enumerate() {
                    ds[argmax[o]] += gv;
                }
                vec![Some(dx)]
            }),
        )
    }
}
