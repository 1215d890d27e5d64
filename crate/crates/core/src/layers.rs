//! Parameterized building blocks: convolution, dense and normalization
//! layers bound through the [`Ctx`] parameter store.

use crate::autodiff::Tensor;
use crate::params::{Ctx, Init};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// Same-padded KxK convolution with bias.
pub fn conv2d<F: Scalar>(
    ctx: &mut Ctx<F>,
    x: &Tensor<F>,
    name: &str,
    k: usize,
    cout: usize,
    stride: usize,
) -> Tensor<F> {
    let cin = x.shape()[3];
    let w = ctx.param(
        &format!("{name}/w"),
        &[k, k, cin, cout],
        Init::HeUniform {
            fan_in: k * k * cin,
        },
    );
    let b = ctx.param(&format!("{name}/b"), &[cout], Init::Zeros);
    x.conv2d(&w, &b, stride)
}

/// 2x2 stride-2 transposed convolution (spatial doubling).
pub fn conv_transpose2x2<F: Scalar>(
    ctx: &mut Ctx<F>,
    x: &Tensor<F>,
    name: &str,
    cout: usize,
) -> Tensor<F> {
    let cin = x.shape()[3];
    let w = ctx.param(
        &format!("{name}/w"),
        &[2, 2, cin, cout],
        Init::HeUniform { fan_in: cin },
    );
    let b = ctx.param(&format!("{name}/b"), &[cout], Init::Zeros);
    x.conv_transpose2x2(&w, &b)
}

/// Dense layer on `(B, I)` input.
pub fn dense<F: Scalar>(ctx: &mut Ctx<F>, x: &Tensor<F>, name: &str, out: usize) -> Tensor<F> {
    let cin = x.shape()[1];
    let w = ctx.param(
        &format!("{name}/w"),
        &[cin, out],
        Init::HeUniform { fan_in: cin },
    );
    let b = ctx.param(&format!("{name}/b"), &[out], Init::Zeros);
    x.matmul(&w).add_bias(&b)
}

/// Per-channel normalization over (batch, height, width) with learnable
/// scale and shift. Uses the statistics of the current batch in every mode.
pub fn channel_norm<F: Scalar>(ctx: &mut Ctx<F>, x: &Tensor<F>, name: &str) -> Tensor<F> {
    let shape = x.shape().to_vec();
    let c = shape[3];
    let gamma = ctx.param(&format!("{name}/gamma"), &[c], Init::Ones);
    let beta = ctx.param(&format!("{name}/beta"), &[c], Init::Zeros);
    let mean = x.mean_channels();
    let centered = x.sub(&mean.broadcast_channel(&shape));
    let var = centered.mul(&centered).mean_channels();
    let inv_std = var.rsqrt_eps(F::of_f64(NORM_EPS));
    centered
        .mul(&inv_std.broadcast_channel(&shape))
        .mul(&gamma.broadcast_channel(&shape))
        .add(&beta.broadcast_channel(&shape))
}
