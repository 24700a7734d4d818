//! Anchor to ground-truth assignment.
//!
//! Two strategies:
//! - fixed IoU thresholds with a per-ground-truth best-anchor rescue;
//! - dynamic matching: each ground truth collects a bag of its highest-IoU
//!   anchors, and the anchor with the best joint quality
//!   `w * cls_score + (1 - w) * iou(predicted box, gt)` becomes its positive.
//!
//! Ties are always broken toward the lower anchor index.

use rayon::prelude::*;

use crate::boxes::{bev_iou, Box3D};
use crate::error::{BevError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive(usize),
    Negative,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentResult {
    /// `(anchor_index, gt_index)`, ascending by anchor.
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<usize>,
    pub ignored: Vec<usize>,
    /// Candidate anchors per ground truth (dynamic mode only).
    pub per_gt_bag: Vec<Vec<usize>>,
}

impl AssignmentResult {
    fn from_labels(labels: &[AnchorLabel], per_gt_bag: Vec<Vec<usize>>) -> Self {
        let mut out = Self {
            per_gt_bag,
            ..Self::default()
        };
        for (a, label) in labels.iter().enumerate() {
            match *label {
                AnchorLabel::Positive(g) => out.positive.push((a, g)),
                AnchorLabel::Negative => out.negative.push(a),
                AnchorLabel::Ignored => out.ignored.push(a),
            }
        }
        out
    }

    /// Dense per-anchor labels.
    pub fn labels(&self, num_anchors: usize) -> Vec<AnchorLabel> {
        let mut labels = vec![AnchorLabel::Negative; num_anchors];
        for &a in &self.ignored {
            labels[a] = AnchorLabel::Ignored;
        }
        for &(a, g) in &self.positive {
            labels[a] = AnchorLabel::Positive(g);
        }
        labels
    }

    pub fn num_anchors(&self) -> usize {
        self.positive.len() + self.negative.len() + self.ignored.len()
    }
}

/// Network outputs per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPrediction {
    pub num_classes: usize,
    /// `[anchor][class]` probabilities.
    pub cls_scores: Vec<f64>,
    /// Decoded box per anchor.
    pub loc_boxes: Vec<Box3D>,
}

impl AnchorPrediction {
    pub fn new(num_classes: usize, cls_scores: Vec<f64>, loc_boxes: Vec<Box3D>) -> Result<Self> {
        if num_classes == 0 || cls_scores.len() != loc_boxes.len() * num_classes {
            return Err(BevError::ShapeMismatch(format!(
                "{} class scores for {} anchors x {num_classes} classes",
                cls_scores.len(),
                loc_boxes.len()
            )));
        }
        if cls_scores.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(BevError::InvalidArgument("class scores must lie in [0, 1]".into()));
        }
        if loc_boxes.iter().any(|b| !b.is_valid()) {
            return Err(BevError::InvalidArgument("predicted boxes must be finite with positive size".into()));
        }
        Ok(Self {
            num_classes,
            cls_scores,
            loc_boxes,
        })
    }

    pub fn len(&self) -> usize {
        self.loc_boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc_boxes.is_empty()
    }

    #[inline]
    pub fn score(&self, anchor: usize, class: u32) -> f64 {
        self.cls_scores[anchor * self.num_classes + class as usize]
    }
}

/// Anchor-major `[anchor][gt]` BEV IoU matrix.
pub fn iou_matrix(anchors: &[Box3D], gts: &[Box3D]) -> Vec<f64> {
    let n = gts.len();
    let mut m = vec![0.0; anchors.len() * n];
    if n == 0 {
        return m;
    }
    m.par_chunks_mut(n).zip(anchors.par_iter()).for_each(|(row, a)| {
        for (cell, g) in row.iter_mut().zip(gts) {
            *cell = bev_iou(a, g);
        }
    });
    m
}

/// Largest value in `row` and its first position.
fn row_argmax(row: &[f64]) -> Option<(usize, f64)> {
    row.iter()
        .copied()
        .enumerate()
        .fold(None, |best, (i, v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
}

/// Positive when the best IoU reaches `pos_thr`, negative below `neg_thr`,
/// ignored in between. Each ground truth then claims its highest-IoU anchor
/// (when that IoU is non-zero); later ground truths override earlier claims.
pub fn assign_fixed_iou(anchors: &[Box3D], gts: &[Box3D], pos_thr: f64, neg_thr: f64) -> Result<AssignmentResult> {
    if pos_thr < neg_thr {
        return Err(BevError::InvalidArgument(format!(
            "positive threshold {pos_thr} below negative threshold {neg_thr}"
        )));
    }
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    if gts.is_empty() {
        return Ok(AssignmentResult::from_labels(&labels, Vec::new()));
    }
    let n = gts.len();
    let ious = iou_matrix(anchors, gts);
    for (a, row) in ious.chunks(n).enumerate() {
        let (g, best) = row_argmax(row).expect("non-empty gts");
        labels[a] = if best >= pos_thr {
            AnchorLabel::Positive(g)
        } else if best < neg_thr {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignored
        };
    }
    for g in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for a in 0..anchors.len() {
            let v = ious[a * n + g];
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        }
        if let Some((a, _)) = best {
            labels[a] = AnchorLabel::Positive(g);
        }
    }
    Ok(AssignmentResult::from_labels(&labels, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicConfig {
    /// Anchors collected per ground truth, by descending IoU.
    pub bag_size: usize,
    /// Weight of the classification score in the joint quality.
    pub score_weight: f64,
    /// Unselected anchors whose best IoU reaches this are ignored rather than negative.
    pub ignore_iou: f64,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            bag_size: 50,
            score_weight: 0.5,
            ignore_iou: 0.3,
        }
    }
}

#[inline]
pub fn joint_quality(cls_score: f64, loc_iou: f64, score_weight: f64) -> f64 {
    score_weight * cls_score + (1.0 - score_weight) * loc_iou
}

/// Top `bag_size` anchors by IoU with each ground truth; zero-IoU anchors never
/// enter a bag.
pub fn build_bags(ious: &[f64], num_anchors: usize, num_gts: usize, bag_size: usize) -> Vec<Vec<usize>> {
    (0..num_gts)
        .into_par_iter()
        .map(|g| {
            let mut cand: Vec<usize> = (0..num_anchors).filter(|&a| ious[a * num_gts + g] > 0.0).collect();
            let key = |a: &usize| ious[a * num_gts + g];
            let by_iou = |a: &usize, b: &usize| key(b).total_cmp(&key(a)).then(a.cmp(b));
            if cand.len() > bag_size {
                cand.select_nth_unstable_by(bag_size - 1, by_iou);
                cand.truncate(bag_size);
            }
            cand.sort_by(by_iou);
            cand
        })
        .collect()
}

/// One-to-one selection of a positive anchor per ground truth from its bag.
///
/// Candidates `(gt, anchor)` are visited by descending `quality`, then
/// ascending gt index, then ascending anchor index; a candidate is accepted when
/// neither its gt nor its anchor is already matched. Returns `(anchor, gt)`.
pub fn select_positives(bags: &[Vec<usize>], quality: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = bags
        .iter()
        .enumerate()
        .flat_map(|(g, bag)| bag.iter().map(move |&a| (g, a)))
        .map(|(g, a)| (quality(g, a), g, a))
        .collect();
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut gt_done = vec![false; bags.len()];
    let mut taken = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(bags.len());
    for (_, g, a) in cands {
        if gt_done[g] || taken.contains(&a) {
            continue;
        }
        gt_done[g] = true;
        taken.insert(a);
        out.push((a, g));
    }
    out.sort_unstable();
    out
}

/// Dynamic (learning-to-match) assignment with a hard argmax per bag.
pub fn assign_dynamic(
    anchors: &[Box3D],
    gts: &[Box3D],
    preds: &AnchorPrediction,
    cfg: &DynamicConfig,
) -> Result<AssignmentResult> {
    if cfg.bag_size == 0 {
        return Err(BevError::InvalidArgument("bag size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.score_weight) {
        return Err(BevError::InvalidArgument(format!(
            "score weight {} outside [0, 1]",
            cfg.score_weight
        )));
    }
    if anchors.is_empty() && !gts.is_empty() {
        return Err(BevError::InvalidArgument("no anchors to assign ground truths to".into()));
    }
    if preds.len() != anchors.len() {
        return Err(BevError::ShapeMismatch(format!(
            "{} predictions for {} anchors",
            preds.len(),
            anchors.len()
        )));
    }
    if let Some(g) = gts.iter().find(|g| g.class_id as usize >= preds.num_classes) {
        return Err(BevError::InvalidArgument(format!(
            "ground-truth class {} outside {} predicted classes",
            g.class_id, preds.num_classes
        )));
    }
    let n = gts.len();
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    if n == 0 {
        return Ok(AssignmentResult::from_labels(&labels, Vec::new()));
    }
    let ious = iou_matrix(anchors, gts);
    let bags = build_bags(&ious, anchors.len(), n, cfg.bag_size);
    let positives = select_positives(&bags, |g, a| {
        joint_quality(
            preds.score(a, gts[g].class_id),
            bev_iou(&preds.loc_boxes[a], &gts[g]),
            cfg.score_weight,
        )
    });
    for (a, row) in ious.chunks(n).enumerate() {
        let best = row.iter().copied().fold(0.0, f64::max);
        if best >= cfg.ignore_iou {
            labels[a] = AnchorLabel::Ignored;
        }
    }
    for &(a, g) in &positives {
        labels[a] = AnchorLabel::Positive(g);
    }
    Ok(AssignmentResult::from_labels(&labels, bags))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64, y: f64) -> Box3D {
        Box3D::new(x, y, 0.0, 1.0, 1.0, 1.0, 0.0)
    }

    fn preds_for(anchors: &[Box3D], scores: &[f64]) -> AnchorPrediction {
        AnchorPrediction::new(1, scores.to_vec(), anchors.to_vec()).unwrap()
    }

    #[test]
    fn fixed_identical_and_disjoint() {
        let gts = [unit(0.0, 0.0)];
        let anchors = [unit(0.0, 0.0), unit(50.0, 0.0), unit(0.6, 0.0)];
        let r = assign_fixed_iou(&anchors, &gts, 0.6, 0.3).unwrap();
        assert_eq!(r.positive, vec![(0, 0)]);
        // IoU(0.6 shift) = 0.4/1.6 = 0.25 < 0.3.
        assert_eq!(r.negative, vec![1, 2]);
        assert!(r.ignored.is_empty());
        assert!(assign_fixed_iou(&anchors, &gts, 0.2, 0.3).is_err());
    }

    #[test]
    fn fixed_rescues_low_quality_match() {
        let gts = [unit(0.0, 0.0)];
        let anchors = [unit(0.7, 0.0), unit(0.8, 0.0)];
        let r = assign_fixed_iou(&anchors, &gts, 0.6, 0.3).unwrap();
        assert_eq!(r.positive, vec![(0, 0)]);
        assert_eq!(r.negative, vec![1]);
    }

    #[test]
    fn fixed_epsilon_thresholds_mark_all_overlaps_positive() {
        let gts = [unit(0.0, 0.0), unit(3.0, 0.0)];
        let anchors: Vec<Box3D> = (0..12).map(|i| unit(i as f64 * 0.4 - 0.5, 0.1)).collect();
        let r = assign_fixed_iou(&anchors, &gts, 1e-12, 1e-12).unwrap();
        let ious = iou_matrix(&anchors, &gts);
        for (a, row) in ious.chunks(2).enumerate() {
            let overlapping = row.iter().any(|&v| v > 0.0);
            assert_eq!(r.positive.iter().any(|&(x, _)| x == a), overlapping, "anchor {a}");
        }
        assert!(r.ignored.is_empty());
    }

    #[test]
    fn dynamic_single_perfect_anchor() {
        let gts = [unit(0.0, 0.0)];
        let anchors = [unit(0.0, 0.0)];
        let r = assign_dynamic(&anchors, &gts, &preds_for(&anchors, &[1.0]), &DynamicConfig::default()).unwrap();
        assert_eq!(r.positive, vec![(0, 0)]);
        assert_eq!(r.per_gt_bag, vec![vec![0]]);
    }

    #[test]
    fn dynamic_prefers_confident_anchor_at_equal_iou() {
        let gts = [unit(0.0, 0.0)];
        let anchors = [unit(-0.5, 0.0), unit(0.5, 0.0), unit(40.0, 0.0)];
        let preds = preds_for(&anchors, &[0.1, 0.9, 0.99]);
        let r = assign_dynamic(&anchors, &gts, &preds, &DynamicConfig::default()).unwrap();
        assert_eq!(r.positive, vec![(1, 0)]);
        assert_eq!(r.ignored, vec![0]);
        assert_eq!(r.negative, vec![2]);
    }

    #[test]
    fn dynamic_rejects_bad_config() {
        let gts = [unit(0.0, 0.0)];
        let anchors = [unit(0.0, 0.0)];
        let preds = preds_for(&anchors, &[0.5]);
        let bad_bag = DynamicConfig { bag_size: 0, ..Default::default() };
        assert!(assign_dynamic(&anchors, &gts, &preds, &bad_bag).is_err());
        let bad_w = DynamicConfig { score_weight: 1.5, ..Default::default() };
        assert!(assign_dynamic(&anchors, &gts, &preds, &bad_w).is_err());
        let empty = AnchorPrediction::new(1, vec![], vec![]).unwrap();
        assert!(assign_dynamic(&[], &gts, &empty, &DynamicConfig::default()).is_err());
    }

    #[test]
    fn conflicting_bags_stay_one_to_one() {
        let gts = [unit(0.0, 0.0), unit(0.2, 0.0)];
        let anchors = [unit(0.1, 0.0), unit(5.0, 5.0)];
        let preds = preds_for(&anchors, &[0.9, 0.9]);
        let cfg = DynamicConfig { bag_size: 1, ..Default::default() };
        let r = assign_dynamic(&anchors, &gts, &preds, &cfg).unwrap();
        assert_eq!(r.positive.len(), 1);
        assert_eq!(r.num_anchors(), 2);
    }
}
