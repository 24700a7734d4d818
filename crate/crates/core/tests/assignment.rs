use bevkit::oracle::{dynamic_assign_reference, fixed_assign_reference};
use bevkit::{assign_dynamic, assign_fixed_iou, AnchorLabel, AnchorPrediction, Box3D, DynamicConfig};
use proptest::prelude::*;
use std::f64::consts::PI;

const K: usize = 3;

fn arb_box(extent: f64) -> impl Strategy<Value = Box3D> {
    (-extent..extent, -extent..extent, 0.5..3.0f64, 0.5..5.0f64, -PI..PI, 0u32..K as u32)
        .prop_map(|(x, y, w, l, t, c)| Box3D::new(x, y, 0.0, w, l, 1.5, t).with_class(c))
}

fn anchors() -> Vec<Box3D> {
    let mut out = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            for t in [0.0, PI / 2.0] {
                out.push(Box3D::new(i as f64 - 4.5, j as f64 - 4.5, 0.0, 1.9, 4.6, 1.7, t));
            }
        }
    }
    out
}

fn instance() -> impl Strategy<Value = (Vec<Box3D>, AnchorPrediction)> {
    let n = anchors().len();
    (
        prop::collection::vec(arb_box(5.0), 0..8),
        prop::collection::vec(0.0..1.0f64, n * K),
        prop::collection::vec(arb_box(5.0), n),
    )
        .prop_map(|(gts, scores, loc)| (gts, AnchorPrediction::new(K, scores, loc).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_matches_reference(gts in prop::collection::vec(arb_box(5.0), 0..8), pos in 0.4..0.7f64, gap in 0.0..0.2f64) {
        let a = anchors();
        let got = assign_fixed_iou(&a, &gts, pos, pos - gap).unwrap();
        prop_assert_eq!(got.labels(a.len()), fixed_assign_reference(&a, &gts, pos, pos - gap));
    }

    #[test]
    fn dynamic_matches_reference((gts, preds) in instance(), bag in 1usize..30, w in 0.0..=1.0f64) {
        let a = anchors();
        let cfg = DynamicConfig { bag_size: bag, score_weight: w, ignore_iou: 0.3 };
        let got = assign_dynamic(&a, &gts, &preds, &cfg).unwrap();
        prop_assert_eq!(got.labels(a.len()), dynamic_assign_reference(&a, &gts, &preds, &cfg));
    }

    #[test]
    fn dynamic_is_one_to_one((gts, preds) in instance()) {
        let a = anchors();
        let got = assign_dynamic(&a, &gts, &preds, &DynamicConfig::default()).unwrap();
        let mut seen = vec![false; gts.len()];
        for &(anchor, g) in &got.positive {
            prop_assert!(!seen[g]);
            seen[g] = true;
            prop_assert!(got.per_gt_bag[g].contains(&anchor));
        }
    }

    #[test]
    fn rescaling_scores_keeps_positives((gts, preds) in instance(), gamma in 0.3..3.0f64) {
        let a = anchors();
        let cfg = DynamicConfig { score_weight: 1.0, ..DynamicConfig::default() };
        let rescaled = AnchorPrediction::new(
            K,
            preds.cls_scores.iter().map(|s| s.powf(gamma)).collect(),
            preds.loc_boxes.clone(),
        ).unwrap();
        let x = assign_dynamic(&a, &gts, &preds, &cfg).unwrap();
        let y = assign_dynamic(&a, &gts, &rescaled, &cfg).unwrap();
        prop_assert_eq!(x.positive, y.positive);
    }
}

#[test]
fn fixed_rescues_a_low_overlap_ground_truth() {
    let a = vec![Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0), Box3D::new(10.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0)];
    let gts = vec![Box3D::new(1.2, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0)];
    let labels = assign_fixed_iou(&a, &gts, 0.6, 0.45).unwrap().labels(a.len());
    assert_eq!(labels, vec![AnchorLabel::Positive(0), AnchorLabel::Negative]);
}

#[test]
fn dynamic_rejects_mismatched_predictions() {
    let a = anchors();
    let preds = AnchorPrediction::new(K, vec![0.5; K], vec![a[0]]).unwrap();
    assert!(assign_dynamic(&a, &[a[0]], &preds, &DynamicConfig::default()).is_err());
}
