use bevkit::metrics::{binarize, interpolated_ap, seg_iou_per_class, DEFAULT_DISTANCE_THRESHOLDS};
use bevkit::oracle::ap_reference;
use bevkit::{center_distance_ap, seg_iou, BevGrid, Box3D};
use proptest::prelude::*;

fn arb_boxes(n: usize, scored: bool) -> impl Strategy<Value = Vec<Box3D>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, 0u32..3, 0.01..1.0f64), 0..n).prop_map(move |v| {
        v.into_iter()
            .map(|(x, y, c, s)| {
                let b = Box3D::new(x, y, 0.8, 1.9, 4.6, 1.7, 0.0).with_class(c);
                if scored {
                    b.with_score(s)
                } else {
                    b
                }
            })
            .collect()
    })
}

fn arb_mask(nx: usize, ny: usize, c: usize) -> impl Strategy<Value = BevGrid> {
    prop::collection::vec(any::<bool>(), nx * ny * c)
        .prop_map(move |v| BevGrid::from_data(nx, ny, c, v.into_iter().map(|b| b as u8 as f32).collect()).unwrap())
}

fn jitter(gts: &[Box3D], d: f64) -> Vec<Box3D> {
    gts.iter()
        .enumerate()
        .map(|(i, g)| Box3D { x: g.x + d * (i as f64).cos(), y: g.y + d * (i as f64).sin(), ..*g })
        .collect()
}

proptest! {
    #[test]
    fn ap_matches_reference(preds in arb_boxes(30, true), gts in arb_boxes(15, false)) {
        let got = center_distance_ap(&preds, &gts, &DEFAULT_DISTANCE_THRESHOLDS);
        let (rows, mean) = ap_reference(&preds, &gts, &DEFAULT_DISTANCE_THRESHOLDS);
        prop_assert_eq!(got.ap_per_class_per_threshold.len(), rows.len());
        for (a, b) in got.ap_per_class_per_threshold.iter().zip(&rows) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
        prop_assert!((got.map - mean).abs() < 1e-12);
    }

    #[test]
    fn ap_is_invariant_to_monotone_score_maps(preds in arb_boxes(30, true), gts in arb_boxes(15, false), gamma in 0.2..5.0f64) {
        let rescaled: Vec<Box3D> = preds.iter().map(|b| Box3D { score: 0.5 * b.score.powf(gamma), ..*b }).collect();
        let a = center_distance_ap(&preds, &gts, &DEFAULT_DISTANCE_THRESHOLDS);
        let b = center_distance_ap(&rescaled, &gts, &DEFAULT_DISTANCE_THRESHOLDS);
        prop_assert_eq!(a.ap_per_class_per_threshold, b.ap_per_class_per_threshold);
    }

    #[test]
    fn ap_is_bounded_and_monotone_in_threshold(preds in arb_boxes(30, true), gts in arb_boxes(15, false)) {
        let r = center_distance_ap(&preds, &gts, &DEFAULT_DISTANCE_THRESHOLDS);
        for row in &r.ap_per_class_per_threshold {
            for w in row.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-12);
            }
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn perfect_predictions_score_one(gts in arb_boxes(15, false)) {
        prop_assume!(!gts.is_empty());
        let preds: Vec<Box3D> = gts.iter().map(|g| g.with_score(0.9)).collect();
        let r = center_distance_ap(&preds, &gts, &DEFAULT_DISTANCE_THRESHOLDS);
        prop_assert!((r.map - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seg_iou_properties(a in arb_mask(6, 5, 2), b in arb_mask(6, 5, 2)) {
        let ab = seg_iou(&a, &b).unwrap();
        prop_assert_eq!(ab, seg_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(seg_iou(&a, &a).unwrap(), 1.0);
        for v in seg_iou_per_class(&a, &b).unwrap() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn far_predictions_miss_only_tight_thresholds() {
    let gts: Vec<Box3D> = (0..5).map(|i| Box3D::new(i as f64 * 10.0, 0.0, 0.8, 1.9, 4.6, 1.7, 0.0)).collect();
    let preds: Vec<Box3D> = jitter(&gts, 1.5).into_iter().map(|b| b.with_score(0.7)).collect();
    let r = center_distance_ap(&preds, &gts, &DEFAULT_DISTANCE_THRESHOLDS);
    assert_eq!(r.ap_per_class_per_threshold[0][0], 0.0);
    assert_eq!(r.ap_per_class_per_threshold[0][1], 0.0);
    assert!((r.ap_per_class_per_threshold[0][2] - 1.0).abs() < 1e-12);
    assert!((r.ap_per_class_per_threshold[0][3] - 1.0).abs() < 1e-12);
}

#[test]
fn interpolated_ap_of_half_recall() {
    let ap = interpolated_ap(&[true, false], 2);
    assert!((ap - 51.0 / 101.0).abs() < 1e-12);
}

#[test]
fn seg_iou_rejects_shape_mismatch_and_non_binary() {
    let a = BevGrid::zeros(4, 4, 1);
    assert!(seg_iou(&a, &BevGrid::zeros(4, 5, 1)).is_err());
    let mut b = BevGrid::zeros(4, 4, 1);
    b.set(0, 0, 0, 0.5);
    assert!(seg_iou(&a, &b).is_err());
    assert_eq!(seg_iou(&a, &binarize(&b, 0.4)).unwrap(), 0.0);
}
