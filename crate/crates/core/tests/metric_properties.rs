use proptest::prelude::*;
use sonobench_core::data::BinaryMask;
use sonobench_core::metrics::{
    confusion, dice, hd95, iou, msd, pooled_surface_distances, sensitivity,
};

fn mask_strategy(max_side: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max_side, 1..=max_side)
        .prop_flat_map(|(h, w)| {
            (
                Just(h),
                Just(w),
                prop::collection::vec(prop::bool::weighted(0.4), h * w),
                prop::collection::vec(prop::bool::weighted(0.4), h * w),
            )
        })
        .prop_map(|(h, w, a, b)| {
            let build = |bits: Vec<bool>| {
                BinaryMask::new(h, w, bits.into_iter().map(u8::from).collect()).unwrap()
            };
            (build(a), build(b))
        })
}

proptest! {
    #[test]
    fn dice_and_iou_satisfy_their_algebraic_identity((pred, gt) in mask_strategy(12)) {
        let c = confusion(&pred, &gt).unwrap();
        let d: f64 = dice(&c);
        let j: f64 = iou(&c);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        prop_assert!((j - d / (2.0 - d)).abs() < 1e-12);
        prop_assert!(j <= d + 1e-15);
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
    }

    #[test]
    fn overlap_scores_are_symmetric((pred, gt) in mask_strategy(12)) {
        let ab = confusion(&pred, &gt).unwrap();
        let ba = confusion(&gt, &pred).unwrap();
        prop_assert_eq!(dice::<f64>(&ab), dice::<f64>(&ba));
        prop_assert_eq!(iou::<f64>(&ab), iou::<f64>(&ba));
    }

    #[test]
    fn sensitivity_is_defined_exactly_when_truth_is_nonempty((pred, gt) in mask_strategy(12)) {
        let c = confusion(&pred, &gt).unwrap();
        let s: Option<f64> = sensitivity(&c);
        prop_assert_eq!(s.is_some(), !gt.is_empty_mask());
        if let Some(v) = s {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn surface_distances_are_symmetric_and_ordered((a, b) in mask_strategy(10)) {
        let d_ab = pooled_surface_distances(&a, &b).unwrap();
        let d_ba = pooled_surface_distances(&b, &a).unwrap();
        prop_assert_eq!(d_ab.is_some(), d_ba.is_some());
        if let (Some(mut ab), Some(mut ba)) = (d_ab, d_ba) {
            ab.sort_unstable();
            ba.sort_unstable();
            prop_assert_eq!(&ab, &ba);

            let h: f64 = hd95(&a, &b).unwrap().unwrap();
            let m: f64 = msd(&a, &b).unwrap().unwrap();
            let worst = (*ab.last().unwrap() as f64).sqrt();
            prop_assert!(h <= worst + 1e-12);
            prop_assert!(m <= worst + 1e-12);
            prop_assert!(m >= 0.0 && h >= 0.0);
        }
    }

    #[test]
    fn surface_metrics_ignore_translation(
        (shape, dy, dx) in (4usize..=9, 0usize..=5, 0usize..=5)
    ) {
        // A fixed blob drawn at two offsets inside a canvas large enough
        // for both; distances must not change.
        let blob = [(0usize, 0usize), (0, 1), (1, 0), (1, 1), (2, 1)];
        let canvas = shape + 8;
        let place = |oy: usize, ox: usize| {
            BinaryMask::from_fn(canvas, canvas, |y, x| {
                blob.iter().any(|&(by, bx)| (y, x) == (by + oy, bx + ox))
            })
        };
        let a0 = place(1, 1);
        let b0 = place(3, 2);
        let a1 = place(1 + dy, 1 + dx);
        let b1 = place(3 + dy, 2 + dx);
        let h0: f64 = hd95(&a0, &b0).unwrap().unwrap();
        let h1: f64 = hd95(&a1, &b1).unwrap().unwrap();
        let m0: f64 = msd(&a0, &b0).unwrap().unwrap();
        let m1: f64 = msd(&a1, &b1).unwrap().unwrap();
        prop_assert_eq!(h0, h1);
        prop_assert_eq!(m0, m1);
    }

    #[test]
    fn identical_masks_score_perfectly((a, _) in mask_strategy(10)) {
        let c = confusion(&a, &a).unwrap();
        prop_assert_eq!(dice::<f64>(&c), 1.0);
        prop_assert_eq!(iou::<f64>(&c), 1.0);
        if !a.is_empty_mask() {
            prop_assert_eq!(hd95::<f64>(&a, &a).unwrap(), Some(0.0));
            prop_assert_eq!(msd::<f64>(&a, &a).unwrap(), Some(0.0));
        }
    }

    #[test]
    fn empty_against_nonempty_leaves_surface_metrics_undefined((a, _) in mask_strategy(8)) {
        let empty = BinaryMask::zeros(a.height(), a.width());
        prop_assert_eq!(hd95::<f64>(&a, &empty).unwrap(), None);
        prop_assert_eq!(hd95::<f64>(&empty, &a).unwrap(), None);
        prop_assert_eq!(msd::<f64>(&a, &empty).unwrap(), None);
    }
}
