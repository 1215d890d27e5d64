//! Confusion counts and the evaluation metrics derived from them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
}

impl ConfusionCounts {
    pub fn total(&self) -> f64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "split,dice,iou,precision,recall,tp,tn,fp,fn";

    pub fn csv_row(&self, split: &str) -> String {
        format!(
            "{split},{},{},{},{},{},{},{},{}",
            self.dice,
            self.iou,
            self.precision,
            self.recall,
            self.counts.tp,
            self.counts.tn,
            self.counts.fp,
            self.counts.fn_
        )
    }
}

/// Pixel-wise confusion counts of two binary masks of equal shape.
pub fn confusion<F: Scalar>(pred: &ArrayD<F>, truth: &ArrayD<F>) -> Result<ConfusionCounts> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape_in(
            format!("{:?}", truth.shape()),
            format!("{:?}", pred.shape()),
            "confusion",
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        let (zero, one) = (F::zero(), F::one());
        if (p != zero && p != one) || (t != zero && t != one) {
            return Err(Error::Data(
                "confusion requires strictly binary masks; threshold predictions first".into(),
            ));
        }
        match (p == one, t == one) {
            (true, true) => c.tp += 1.0,
            (true, false) => c.fp += 1.0,
            (false, true) => c.fn_ += 1.0,
            (false, false) => c.tn += 1.0,
        }
    }
    Ok(c)
}

fn ratio(num: f64, den: f64, empty_is_perfect: bool) -> f64 {
    if den == 0.0 {
        if empty_is_perfect {
            1.0
        } else {
            0.0
        }
    } else {
        num / den
    }
}

/// Dice, IoU, precision and recall from confusion counts. Each degenerate
/// 0/0 case evaluates to 1 when the corresponding error count is also zero
/// and 0 otherwise.
pub fn metrics(counts: &ConfusionCounts) -> MetricsReport {
    let ConfusionCounts { tp, fp, fn_, .. } = *counts;
    let dice = ratio(2.0 * tp, 2.0 * tp + fp + fn_, fp + fn_ == 0.0);
    let iou = ratio(tp, tp + fp + fn_, fp + fn_ == 0.0);
    let precision = ratio(tp, tp + fp, fn_ == 0.0);
    let recall = ratio(tp, tp + fn_, fp == 0.0);
    MetricsReport {
        dice,
        iou,
        precision,
        recall,
        counts: *counts,
    }
}

/// Threshold probabilities at `thr` with the strictly-greater convention.
pub fn threshold<F: Scalar>(pred: &ArrayD<F>, thr: f64) -> ArrayD<F> {
    let t = F::of_f64(thr);
    pred.mapv(|v| if v > t { F::one() } else { F::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn mask(data: Vec<f64>) -> ArrayD<f64> {
        let n = data.len();
        ArrayD::from_shape_vec(IxDyn(&[n]), data).unwrap()
    }

    #[test]
    fn identical_masks_count_only_tp_and_tn() {
        let m = mask(vec![1.0, 0.0, 1.0, 1.0]);
        let c = confusion(&m, &m).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 3.0,
                tn: 1.0,
                fp: 0.0,
                fn_: 0.0
            }
        );
    }

    #[test]
    fn confusion_hand_case() {
        let truth = mask(vec![1.0, 1.0, 0.0, 0.0]);
        let pred = mask(vec![1.0, 1.0, 1.0, 1.0]);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2.0,
                tn: 0.0,
                fp: 2.0,
                fn_: 0.0
            }
        );
        let m = metrics(&c);
        assert_eq!(m.dice, 2.0 / 3.0);
        assert_eq!(m.iou, 0.5);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn confusion_matches_pixel_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let pred: Vec<f64> = (0..256).map(|_| f64::from(rng.gen_bool(0.4))).collect();
        let truth: Vec<f64> = (0..256).map(|_| f64::from(rng.gen_bool(0.6))).collect();
        let c = confusion(&mask(pred.clone()), &mask(truth.clone())).unwrap();
        let mut o = ConfusionCounts::default();
        for (p, t) in pred.iter().zip(truth.iter()) {
            match (*p == 1.0, *t == 1.0) {
                (true, true) => o.tp += 1.0,
                (true, false) => o.fp += 1.0,
                (false, true) => o.fn_ += 1.0,
                (false, false) => o.tn += 1.0,
            }
        }
        assert_eq!(c, o);
        assert_eq!(c.total(), 256.0);
    }

    #[test]
    fn non_binary_input_is_rejected() {
        let soft = mask(vec![0.5, 1.0]);
        let hard = mask(vec![0.0, 1.0]);
        assert!(confusion(&soft, &hard).is_err());
        assert!(confusion(&hard, &soft).is_err());
    }

    #[test]
    fn perfect_masks_score_one_everywhere() {
        let m = metrics(&ConfusionCounts {
            tp: 5.0,
            tn: 3.0,
            fp: 0.0,
            fn_: 0.0,
        });
        assert_eq!((m.dice, m.iou, m.precision, m.recall), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_scene_conventions() {
        // nothing predicted, nothing present: perfect
        let all_tn = metrics(&ConfusionCounts {
            tp: 0.0,
            tn: 4.0,
            fp: 0.0,
            fn_: 0.0,
        });
        assert_eq!(
            (all_tn.dice, all_tn.iou, all_tn.precision, all_tn.recall),
            (1.0, 1.0, 1.0, 1.0)
        );
        // nothing predicted but objects present: recall undefined numerator case
        let missed = metrics(&ConfusionCounts {
            tp: 0.0,
            tn: 2.0,
            fp: 0.0,
            fn_: 2.0,
        });
        assert_eq!(missed.dice, 0.0);
        assert_eq!(missed.precision, 0.0);
        assert_eq!(missed.recall, 0.0);
    }

    #[test]
    fn iou_follows_from_dice_algebraically() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let c = ConfusionCounts {
                tp: rng.gen_range(1..100) as f64,
                tn: rng.gen_range(0..100) as f64,
                fp: rng.gen_range(0..100) as f64,
                fn_: rng.gen_range(0..100) as f64,
            };
            let m = metrics(&c);
            assert!((m.iou - m.dice / (2.0 - m.dice)).abs() < 1e-12);
            assert!(m.iou <= m.dice + 1e-15);
            for v in [m.dice, m.iou, m.precision, m.recall] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn hard_dice_is_symmetric() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = mask((0..64).map(|_| f64::from(rng.gen_bool(0.5))).collect());
        let b = mask((0..64).map(|_| f64::from(rng.gen_bool(0.5))).collect());
        let d_ab = metrics(&confusion(&a, &b).unwrap()).dice;
        let d_ba = metrics(&confusion(&b, &a).unwrap()).dice;
        assert_eq!(d_ab, d_ba);
    }

    #[test]
    fn threshold_uses_strictly_greater() {
        let p = mask(vec![0.2, 0.5, 0.500001, 0.9]);
        let h = threshold(&p, 0.5);
        assert_eq!(h.as_slice().unwrap(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let m = metrics(&ConfusionCounts {
            tp: 1.0,
            tn: 2.0,
            fp: 3.0,
            fn_: 4.0,
        });
        let row = m.csv_row("val");
        assert_eq!(
            row.split(',').count(),
            MetricsReport::CSV_HEADER.split(',').count()
        );
        assert!(row.starts_with("val,"));
    }
}
