//! Matrix multiply, reshape and channel concatenation.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, Ix2, IxDyn};

impl<F: Scalar> Tensor<F> {
    /// `(M, K) x (K, N) -> (M, N)`.
    pub fn matmul(&self, other: &Tensor<F>) -> Tensor<F> {
        let a = self
            .value()
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul lhs rank 2");
        let b = other
            .value()
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs rank 2");
        assert_eq!(a.ncols(), b.nrows(), "matmul: inner dims");
        let value = super::conv::matmul2(&a, &b).into_dyn();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a = parents[0]
                    .value()
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let b = parents[1]
                    .value()
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let da = g2.dot(&b.t()).into_dyn();
                let db = a.t().dot(&g2).into_dyn();
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let old: Vec<usize> = self.shape().to_vec();
        let value = self
            .value()
            .clone()
            .into_shape(IxDyn(shape))
            .expect("reshape: element count");
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                vec![Some(g.clone().into_shape(IxDyn(&old)).unwrap())]
            }),
        )
    }

    /// Concatenate rank-4 tensors along the channel (last) axis.
    pub fn concat_channels(parts: &[Tensor<F>]) -> Tensor<F> {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let value = ndarray::concatenate(Axis(3), &views)
            .expect("concat_channels")
            .as_standard_layout()
            .to_owned();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[3]).collect();
        Tensor::from_op(
            value,
            parts.to_vec(),
            Box::new(move |g, _| {
                let mut out = Vec::with_capacity(widths.len());
                let mut start = 0;
                for &w in &widths {
                    let slice: ArrayD<F> = g
                        .slice_axis(Axis(3), ndarray::Slice::from(start..start + w))
                        .to_owned();
                    out.push(Some(slice));
                    start += w;
                }
                out
            }),
        )
    }
}
