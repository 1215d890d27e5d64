//! MultiResUNet-style encoder-decoder with variant-selectable skip paths and
//! bottleneck attention.

use crate::autodiff::Tensor;
use crate::cdrb;
use crate::error::{Error, Result};
use crate::gdam::{self, Mode};
use crate::layers::{channel_norm, conv2d, conv_transpose2x2};
use crate::params::{Ctx, ParamStore};
use crate::scalar::Scalar;
use crate::text;
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

/// Ablation variants, in the order they build on each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain MultiResUNet: non-dense res paths, no controller, no attention.
    Baseline,
    /// Dense res paths on the skips, controller off.
    CdrbNoController,
    /// Dense res paths with the lambda controller.
    Cdrb,
    /// CDRB skips plus the Gaussian text attention at the bottleneck.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::CdrbNoController,
        Variant::Cdrb,
        Variant::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::CdrbNoController => "cdrb_no_controller",
            Variant::Cdrb => "cdrb",
            Variant::Full => "full",
        }
    }

    fn dense_skips(&self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    fn uses_controller(&self) -> bool {
        matches!(self, Variant::Cdrb | Variant::Full)
    }

    pub fn uses_text(&self) -> bool {
        matches!(self, Variant::Full)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "cdrb_no_controller" => Ok(Variant::CdrbNoController),
            "cdrb" => Ok(Variant::Cdrb),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected baseline, cdrb_no_controller, cdrb or full)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Number of encoder levels.
    pub depth: usize,
    /// Base channel width U; level l uses about alpha * U * 2^l channels.
    pub base_width: usize,
    pub alpha: f64,
    pub variant: Variant,
    pub seed: u64,
    /// Emit a single-channel attention map broadcast over channels instead
    /// of a per-channel map.
    pub gdam_broadcast: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_height: 512,
            input_width: 512,
            input_channels: 3,
            depth: 4,
            base_width: 32,
            alpha: 1.67,
            variant: Variant::Full,
            seed: 42,
            gdam_broadcast: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        let div = 1usize << self.depth;
        if self.input_height % div != 0 || self.input_width % div != 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by 2^depth = {div}",
                self.input_height, self.input_width
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be >= 1".into()));
        }
        if self.level_width(0) < 3 {
            return Err(Error::Config(format!(
                "base width {} with alpha {} leaves fewer than 3 channels at level 0",
                self.base_width, self.alpha
            )));
        }
        Ok(())
    }

    /// Channel width at encoder level `l` (level `depth` is the bottleneck).
    pub fn level_width(&self, l: usize) -> usize {
        (self.alpha * self.base_width as f64 * (1u64 << l) as f64).round() as usize
    }
}

/// Branch widths of one multi-residual block: roughly W/6, W/3, W/2, summing
/// exactly to W (the last branch absorbs the remainder).
pub fn branch_split(width: usize) -> [usize; 3] {
    let a = (width / 6).max(1);
    let b = (width / 3).max(1);
    let c = width.saturating_sub(a + b).max(1);
    [a, b, c]
}

/// One multi-residual block: three chained 3x3 conv branches concatenated,
/// plus a 1x1 shortcut, normalized and activated.
pub fn mrb_forward<F: Scalar>(
    ctx: &mut Ctx<F>,
    x: &Tensor<F>,
    widths: &[usize; 3],
    name: &str,
) -> Tensor<F> {
    let b1 = conv2d(ctx, x, &format!("{name}/branch0"), 3, widths[0], 1);
    let b1 = channel_norm(ctx, &b1, &format!("{name}/branch0/norm")).relu();
    let b2 = conv2d(ctx, &b1, &format!("{name}/branch1"), 3, widths[1], 1);
    let b2 = channel_norm(ctx, &b2, &format!("{name}/branch1/norm")).relu();
    let b3 = conv2d(ctx, &b2, &format!("{name}/branch2"), 3, widths[2], 1);
    let b3 = channel_norm(ctx, &b3, &format!("{name}/branch2/norm")).relu();
    let cat = Tensor::concat_channels(&[b1, b2, b3]);
    let total: usize = widths.iter().sum();
    let shortcut = conv2d(ctx, x, &format!("{name}/shortcut"), 1, total, 1);
    let summed = cat.add(&shortcut);
    channel_norm(ctx, &summed, &format!("{name}/norm")).relu()
}

/// Everything one forward pass produces.
pub struct ForwardPass<F: Scalar> {
    /// Sigmoid probabilities, `(B, H, W, 1)`.
    pub pred: Tensor<F>,
    /// Attention map from the bottleneck gate (full variant only).
    pub attention: Option<ArrayD<F>>,
    /// Per-stage activations, present when tracing was requested.
    pub trace: Option<BTreeMap<String, ArrayD<F>>>,
    /// Parameter leaves bound during this pass; gradients land here.
    pub leaves: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ForwardPass<F> {
    pub fn gradients(&self) -> BTreeMap<String, ArrayD<F>> {
        self.leaves
            .iter()
            .filter_map(|(n, t)| t.grad().map(|g| (n.clone(), g)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct GruNet<F: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamStore<F>,
}

impl<F: Scalar> GruNet<F> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GruNet {
            cfg,
            params: ParamStore::new(),
        })
    }

    /// Forward on a `(B, H, W, C)` batch. `text_raw` is the 16xN embedding
    /// matrix, required iff the variant uses text. `noise_seed` drives the
    /// attention sampling in train mode.
    pub fn forward(
        &mut self,
        image: &ArrayD<F>,
        text_raw: Option<&Array2<f64>>,
        mode: Mode,
        noise_seed: u64,
        track_grad: bool,
        trace: bool,
    ) -> Result<ForwardPass<F>> {
        let cfg = self.cfg.clone();
        cfg.validate()?;
        let s = image.shape();
        if s.len() != 4
            || s[1] != cfg.input_height
            || s[2] != cfg.input_width
            || s[3] != cfg.input_channels
        {
            return Err(Error::shape_in(
                format!(
                    "(B, {}, {}, {})",
                    cfg.input_height, cfg.input_width, cfg.input_channels
                ),
                format!("{s:?}"),
                "model input",
            ));
        }
        if cfg.variant.uses_text() && text_raw.is_none() {
            return Err(Error::MissingText);
        }

        let mut ctx = Ctx::new(&mut self.params, cfg.seed, track_grad);
        let mut traces: BTreeMap<String, ArrayD<F>> = BTreeMap::new();
        let mut x = Tensor::constant(image.clone());
        let mut skips: Vec<Tensor<F>> = Vec::with_capacity(cfg.depth);

        for l in 0..cfg.depth {
            let w = cfg.level_width(l);
            x = mrb_forward(&mut ctx, &x, &branch_split(w), &format!("enc{l}/mrb"));
            if trace {
                traces.insert(format!("enc{l}"), x.value().clone());
            }
            skips.push(x.clone());
            x = x.maxpool2();
        }

        let wb = cfg.level_width(cfg.depth);
        x = mrb_forward(&mut ctx, &x, &branch_split(wb), "bottleneck/mrb");
        if trace {
            traces.insert("bottleneck".to_string(), x.value().clone());
        }

        let mut attention = None;
        if cfg.variant.uses_text() {
            let raw = text_raw.unwrap();
            let t_proj = text::project_embeddings(&mut ctx, raw, "text/proj");
            let eps = gdam::draw_eps::<F>(s[0], noise_seed);
            let (gated, att) = gdam::gdam_forward(
                &mut ctx,
                &x,
                &t_proj,
                mode,
                &eps,
                cfg.gdam_broadcast,
                "gdam",
            )?;
            attention = Some(att.value().clone());
            if trace {
                traces.insert("gdam_attention".to_string(), att.value().clone());
            }
            x = gated;
        }

        for l in (0..cfg.depth).rev() {
            let w = cfg.level_width(l);
            x = conv_transpose2x2(&mut ctx, &x, &format!("dec{l}/up"), w);
            let n_blocks = cfg.depth - l;
            let skip = &skips[l];
            let routed = if cfg.variant.dense_skips() {
                cdrb::cdrb_forward(
                    &mut ctx,
                    skip,
                    n_blocks,
                    cfg.variant.uses_controller(),
                    &format!("skip{l}"),
                )
            } else {
                cdrb::res_path(&mut ctx, skip, n_blocks, false, &format!("skip{l}"))
            };
            x = Tensor::concat_channels(&[x, routed]);
            x = mrb_forward(&mut ctx, &x, &branch_split(w), &format!("dec{l}/mrb"));
            if trace {
                traces.insert(format!("dec{l}"), x.value().clone());
            }
        }

        let pred = conv2d(&mut ctx, &x, "head", 1, 1, 1).sigmoid();
        Ok(ForwardPass {
            pred,
            attention,
            trace: trace.then_some(traces),
            leaves: ctx.into_leaves(),
        })
    }

    /// Materialize every parameter without running a real batch: one forward
    /// on a zero batch of size 1.
    pub fn build(&mut self, text_raw: Option<&Array2<f64>>) -> Result<()> {
        let cfg = &self.cfg;
        let zeros = ArrayD::zeros(IxDyn(&[
            1,
            cfg.input_height,
            cfg.input_width,
            cfg.input_channels,
        ]));
        self.forward(&zeros, text_raw, Mode::Infer, 0, false, false)?;
        Ok(())
    }
}
