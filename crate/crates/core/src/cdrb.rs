//! Controlled Dense Residual Block: the skip-connection path.
//!
//! A chain of residual conv blocks (optionally densely connected) followed by
//! a controller that compresses the feature map to a per-sample scalar
//! lambda in (0,1) and scales the transferred feature with it.

use crate::autodiff::Tensor;
use crate::layers::conv2d;
use crate::params::Ctx;
use crate::scalar::Scalar;

/// Residual chain on a skip connection. With `dense`, every block past the
/// first also receives a 1x1 projection of the concatenation of all earlier
/// block outputs, added to its input so that zero projection weights reduce
/// to the plain path.
pub fn res_path<F: Scalar>(
    ctx: &mut Ctx<F>,
    x: &Tensor<F>,
    n_blocks: usize,
    dense: bool,
    name: &str,
) -> Tensor<F> {
    assert!(n_blocks >= 1, "res_path: n_blocks must be >= 1");
    let width = x.shape()[3];
    let mut outs: Vec<Tensor<F>> = vec![x.clone()];
    for i in 0..n_blocks {
        let prev = outs.last().unwrap().clone();
        let inp = if dense && outs.len() >= 2 {
            let cat = Tensor::concat_channels(&outs);
            let proj = conv2d(ctx, &cat, &format!("{name}/dense{i}"), 1, width, 1);
            prev.add(&proj)
        } else {
            prev
        };
        let body = conv2d(ctx, &inp, &format!("{name}/block{i}"), 3, width, 1).relu();
        outs.push(inp.add(&body));
    }
    outs.pop().unwrap()
}

/// Global average pooling: `(B, H, W, C) -> (B, C)`.
pub fn gap<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.spatial_mean()
}

/// GAP features to a per-sample scalar in (0,1): one hidden dense layer with
/// ReLU, then a sigmoid unit. Output shape `(B, 1)`.
pub fn controller<F: Scalar>(ctx: &mut Ctx<F>, f_prime: &Tensor<F>, name: &str) -> Tensor<F> {
    let c = f_prime.shape()[1];
    let hidden = (c / 2).max(1);
    let h = crate::layers::dense(ctx, f_prime, &format!("{name}/dense0"), hidden).relu();
    crate::layers::dense(ctx, &h, &format!("{name}/dense1"), 1).sigmoid()
}

/// Full CDRB skip path. Dense connections are always on here; the plain
/// (non-dense, uncontrolled) path used by the baseline variant is `res_path`
/// with `dense = false`.
pub fn cdrb_forward<F: Scalar>(
    ctx: &mut Ctx<F>,
    f_enc: &Tensor<F>,
    n_blocks: usize,
    use_controller: bool,
    name: &str,
) -> Tensor<F> {
    let f = res_path(ctx, f_enc, n_blocks, true, name);
    if !use_controller {
        return f;
    }
    let lambda = controller(ctx, &gap(&f), &format!("{name}/ctrl"));
    scale_by_lambda(&f, &lambda)
}

/// Broadcast a `(B, 1)` scaling factor over `(B, H, W, C)`.
pub fn scale_by_lambda<F: Scalar>(f: &Tensor<F>, lambda: &Tensor<F>) -> Tensor<F> {
    let b = f.shape()[0];
    assert_eq!(lambda.shape(), [b, 1], "lambda must be (B, 1)");
    let shape = f.shape().to_vec();
    f.mul(&lambda.reshape(&[b]).broadcast_to(&shape))
}
