//! Property-based invariants over random inputs.

use grunet_core::autodiff::Tensor;
use grunet_core::cdrb::{controller, gap};
use grunet_core::gdam::fuse_gaussian;
use grunet_core::loss::{bce_loss, dice_loss, hybrid_loss};
use grunet_core::metrics::{metrics, ConfusionCounts};
use grunet_core::params::{Ctx, ParamStore};
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::constant(ArrayD::from_shape_vec(IxDyn(shape), data).unwrap())
}

proptest! {
    #[test]
    fn fusion_is_commutative_and_sigma_dominates(
        mf in -10.0f64..10.0, sf in 0.0f64..10.0,
        mt in -10.0f64..10.0, st in 0.0f64..10.0,
    ) {
        let a = fuse_gaussian(
            (&t(&[1], vec![mf]), &t(&[1], vec![sf])),
            (&t(&[1], vec![mt]), &t(&[1], vec![st])),
        );
        let b = fuse_gaussian(
            (&t(&[1], vec![mt]), &t(&[1], vec![st])),
            (&t(&[1], vec![mf]), &t(&[1], vec![sf])),
        );
        prop_assert_eq!(a.0.value()[[0]], b.0.value()[[0]]);
        prop_assert_eq!(a.1.value()[[0]], b.1.value()[[0]]);
        prop_assert!((a.0.value()[[0]] - (mf + mt)).abs() < 1e-12);
        prop_assert!(a.1.value()[[0]] >= sf.max(st) - 1e-12);
        prop_assert!(a.1.value()[[0]] <= sf + st + 1e-12);
    }

    #[test]
    fn lambda_stays_strictly_inside_unit_interval(
        seed in 0u64..1000,
        scale in 0.01f64..1.0,
    ) {
        let mut store = ParamStore::<f64>::new();
        let mut ctx = Ctx::new(&mut store, seed, false);
        let features: Vec<f64> = (0..16)
            .map(|i| ((seed as f64 + i as f64) * 0.37).sin() * scale)
            .collect();
        let lambda = controller(&mut ctx, &t(&[2, 8], features), "c");
        for v in lambda.value().iter() {
            prop_assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn hybrid_loss_is_the_exact_sum(
        pred in proptest::collection::vec(0.001f64..0.999, 32),
        truth_bits in proptest::collection::vec(any::<bool>(), 32),
    ) {
        let truth: Vec<f64> = truth_bits.iter().map(|&b| f64::from(b)).collect();
        let p = t(&[32], pred);
        let y = t(&[32], truth);
        let h = hybrid_loss(&p, &y).unwrap().scalar();
        let d = dice_loss(&p, &y).unwrap().scalar();
        let b = bce_loss(&p, &y).unwrap().scalar();
        prop_assert!((h - (d + b)).abs() < 1e-12);
        prop_assert!((0.0..1.0).contains(&d));
        prop_assert!(b >= 0.0);
    }

    #[test]
    fn metric_identities_hold_for_any_counts(
        tp in 0u32..500, tn in 0u32..500, fp in 0u32..500, fn_ in 0u32..500,
    ) {
        let m = metrics(&ConfusionCounts {
            tp: tp as f64,
            tn: tn as f64,
            fp: fp as f64,
            fn_: fn_ as f64,
        });
        prop_assert!((m.iou - m.dice / (2.0 - m.dice)).abs() < 1e-12);
        prop_assert!(m.iou <= m.dice + 1e-15);
        for v in [m.dice, m.iou, m.precision, m.recall] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn gap_is_linear(
        data in proptest::collection::vec(-5.0f64..5.0, 24),
        alpha in -3.0f64..3.0,
    ) {
        let x = t(&[2, 2, 3, 2], data);
        let scaled = gap(&x.scale(alpha));
        let reference = gap(&x).scale(alpha);
        for (a, b) in scaled.value().iter().zip(reference.value().iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
