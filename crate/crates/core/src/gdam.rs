//! Gaussian distribution-based attention over the bottleneck.
//!
//! Feature and text statistics are fused into a single Gaussian per sample
//! (means add, variances add), a 32x32 seed map is drawn from it with the
//! reparameterization trick, decoded to the bottleneck resolution and turned
//! into a sigmoid gate.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::layers::{channel_norm, conv2d, conv_transpose2x2};
use crate::params::Ctx;
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Side length of the sampled seed map, matching the projected text matrix.
pub const ETA_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-sample mean and population standard deviation over all non-batch
/// axes. Input `(B, ...)`, outputs `(B,)` each.
pub fn feature_stats<F: Scalar>(x: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
    let mu = x.mean_non_batch();
    let centered = x.sub(&mu.broadcast_to(x.shape()));
    let sigma = centered.mul(&centered).mean_non_batch().sqrt();
    (mu, sigma)
}

/// Mean and population standard deviation of an entire (batchless) tensor,
/// as 0-d tensors.
pub fn global_stats<F: Scalar>(x: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
    let mu = x.mean_all();
    let centered = x.sub(&mu.broadcast_to(x.shape()));
    let sigma = centered.mul(&centered).mean_all().sqrt();
    (mu, sigma)
}

/// Fuse two Gaussians: means add, standard deviations combine in quadrature.
/// Both sides must have the same shape.
pub fn fuse_gaussian<F: Scalar>(
    stats_f: (&Tensor<F>, &Tensor<F>),
    stats_t: (&Tensor<F>, &Tensor<F>),
) -> (Tensor<F>, Tensor<F>) {
    let mu = stats_f.0.add(stats_t.0);
    let sigma = stats_f
        .1
        .mul(stats_f.1)
        .add(&stats_t.1.mul(stats_t.1))
        .sqrt();
    (mu, sigma)
}

/// Standard-normal noise `(B, ETA_SIZE, ETA_SIZE, 1)` from a seeded stream.
pub fn draw_eps<F: Scalar>(batch: usize, seed: u64) -> ArrayD<F> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = batch * ETA_SIZE * ETA_SIZE;
    let data: Vec<F> = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            F::of_f64(v)
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(&[batch, ETA_SIZE, ETA_SIZE, 1]), data).unwrap()
}

/// Reparameterized sample z = mu + sigma * eps; `eps` is ignored (treated as
/// zero) in infer mode. `mu` and `sigma` are `(B,)`.
pub fn sample_eta<F: Scalar>(
    mu: &Tensor<F>,
    sigma: &Tensor<F>,
    mode: Mode,
    eps: &ArrayD<F>,
) -> Tensor<F> {
    let b = mu.shape()[0];
    let shape = [b, ETA_SIZE, ETA_SIZE, 1];
    let mu_b = mu.broadcast_to(&shape);
    match mode {
        Mode::Infer => mu_b,
        Mode::Train => {
            assert_eq!(eps.shape(), shape, "eps shape");
            let noise = Tensor::constant(eps.clone());
            mu_b.add(&sigma.broadcast_to(&shape).mul(&noise))
        }
    }
}

/// Number of stride-2 stages between the 32x32 seed and the bottleneck, with
/// the direction (true = upsample). Errors when the bottleneck is not
/// related to 32 by whole doublings/halvings.
fn decode_plan(bh: usize, bw: usize) -> Result<(usize, bool)> {
    if bh != bw {
        return Err(Error::Config(format!(
            "attention decoding requires a square bottleneck, got {bh}x{bw}"
        )));
    }
    let mut cur = ETA_SIZE;
    if bh >= ETA_SIZE {
        let mut stages = 0;
        while cur < bh {
            cur *= 2;
            stages += 1;
        }
        if cur == bh {
            return Ok((stages, true));
        }
    } else {
        let mut stages = 0;
        while cur > bh {
            cur /= 2;
            stages += 1;
        }
        if cur == bh {
            return Ok((stages, false));
        }
    }
    Err(Error::Config(format!(
        "bottleneck {bh}x{bw} is not reachable from {s}x{s} by doubling or halving",
        s = ETA_SIZE
    )))
}

/// Attention module forward: returns (gated bottleneck, attention map).
#[allow(clippy::too_many_arguments)]
pub fn gdam_forward<F: Scalar>(
    ctx: &mut Ctx<F>,
    f_bottleneck: &Tensor<F>,
    t_projected: &Tensor<F>,
    mode: Mode,
    eps: &ArrayD<F>,
    broadcast_single_channel: bool,
    name: &str,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let s = f_bottleneck.shape().to_vec();
    let (b, bh, bw, c) = (s[0], s[1], s[2], s[3]);
    let (stages, upsample) = decode_plan(bh, bw)?;

    let (mu_f, sigma_f) = feature_stats(f_bottleneck);
    let (mu_t0, sigma_t0) = global_stats(t_projected);
    let mu_t = mu_t0.broadcast_to(&[b]);
    let sigma_t = sigma_t0.broadcast_to(&[b]);
    let (mu, sigma) = fuse_gaussian((&mu_f, &sigma_f), (&mu_t, &sigma_t));

    let mut z = sample_eta(&mu, &sigma, mode, eps);
    let mid = (c / 2).max(1);
    for i in 0..stages {
        z = if upsample {
            conv_transpose2x2(ctx, &z, &format!("{name}/stage{i}"), mid)
        } else {
            conv2d(ctx, &z, &format!("{name}/stage{i}"), 3, mid, 2)
        };
        z = channel_norm(ctx, &z, &format!("{name}/stage{i}/norm")).relu();
    }
    if stages == 0 {
        // sizes already match: one 1x1 resampling convolution
        z = conv2d(ctx, &z, &format!("{name}/resample"), 1, mid, 1).relu();
    }
    let att_channels = if broadcast_single_channel { 1 } else { c };
    let attention = conv2d(ctx, &z, &format!("{name}/att"), 3, att_channels, 1).sigmoid();
    let gate = if broadcast_single_channel {
        Tensor::concat_channels(&vec![attention.clone(); c])
    } else {
        attention.clone()
    };
    Ok((f_bottleneck.mul(&gate), attention))
}
