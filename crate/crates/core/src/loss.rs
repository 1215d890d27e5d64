//! Training losses: soft Dice, BCE and their unweighted sum.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smoothing added to the soft-Dice numerator and denominator.
pub const DICE_EPS: f64 = 1e-6;
/// Probabilities are clamped to [delta, 1 - delta] before logs.
pub const BCE_DELTA: f64 = 1e-7;

fn check_shapes<F: Scalar>(pred: &Tensor<F>, truth: &Tensor<F>, what: &str) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape_in(
            format!("{:?}", truth.shape()),
            format!("{:?}", pred.shape()),
            what,
        ));
    }
    Ok(())
}

fn one_minus<F: Scalar>(t: &Tensor<F>) -> Tensor<F> {
    t.neg().add_scalar(F::one())
}

/// Soft Dice loss 1 - (2 TP + eps) / (2 TP + FP + FN + eps) with
/// TP = sum(p y), FP = sum(p (1-y)), FN = sum((1-p) y).
pub fn dice_loss<F: Scalar>(pred: &Tensor<F>, truth: &Tensor<F>) -> Result<Tensor<F>> {
    check_shapes(pred, truth, "dice_loss")?;
    let eps = F::of_f64(DICE_EPS);
    let tp = pred.mul(truth).sum_all();
    let fp = pred.mul(&one_minus(truth)).sum_all();
    let fneg = one_minus(pred).mul(truth).sum_all();
    let num = tp.scale(F::of_f64(2.0)).add_scalar(eps);
    let den = tp
        .scale(F::of_f64(2.0))
        .add(&fp)
        .add(&fneg)
        .add_scalar(eps);
    Ok(one_minus(&num.div(&den)))
}

/// Mean binary cross entropy over all pixels.
pub fn bce_loss<F: Scalar>(pred: &Tensor<F>, truth: &Tensor<F>) -> Result<Tensor<F>> {
    check_shapes(pred, truth, "bce_loss")?;
    let delta = F::of_f64(BCE_DELTA);
    let p = pred.clip(delta, F::one() - delta);
    let pos = truth.mul(&p.ln());
    let neg = one_minus(truth).mul(&one_minus(&p).ln());
    Ok(pos.add(&neg).mean_all().neg())
}

/// BCE + Dice, unweighted.
pub fn hybrid_loss<F: Scalar>(pred: &Tensor<F>, truth: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(bce_loss(pred, truth)?.add(&dice_loss(pred, truth)?))
}
