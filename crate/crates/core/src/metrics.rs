//! BEV segmentation IoU and center-distance detection AP.

use std::collections::BTreeSet;

use crate::boxes::Box3D;
use crate::error::{BevError, Result};
use crate::voxel::BevGrid;

/// Default center-distance match thresholds in meters.
pub const DEFAULT_DISTANCE_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalResult {
    pub seg_iou_per_class: Vec<f64>,
    /// Classes (ascending) that had at least one ground truth; row order of
    /// `ap_per_class_per_threshold`.
    pub classes: Vec<u32>,
    pub thresholds: Vec<f64>,
    pub ap_per_class_per_threshold: Vec<Vec<f64>>,
    /// Mean AP over classes and thresholds.
    pub map: f64,
}

impl EvalResult {
    pub fn mean_seg_iou(&self) -> f64 {
        if self.seg_iou_per_class.is_empty() {
            return 0.0;
        }
        self.seg_iou_per_class.iter().sum::<f64>() / self.seg_iou_per_class.len() as f64
    }
}

fn check_binary_pair(pred: &BevGrid, gt: &BevGrid) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(BevError::ShapeMismatch(format!(
            "prediction {}x{}x{} vs ground truth {}x{}x{}",
            pred.nx, pred.ny, pred.channels, gt.nx, gt.ny, gt.channels
        )));
    }
    if pred.data.iter().chain(&gt.data).any(|&v| v != 0.0 && v != 1.0) {
        return Err(BevError::InvalidArgument("segmentation masks must be binary".into()));
    }
    Ok(())
}

fn iou_counts<'a>(pred: impl Iterator<Item = &'a f32>, gt: impl Iterator<Item = &'a f32>) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in pred.zip(gt) {
        let (p, g) = (p == 1.0, g == 1.0);
        inter += (p && g) as u64;
        union += (p || g) as u64;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `|pred and gt| / |pred or gt|` over every cell and channel; 1.0 when both
/// masks are empty.
pub fn seg_iou(pred: &BevGrid, gt: &BevGrid) -> Result<f64> {
    check_binary_pair(pred, gt)?;
    Ok(iou_counts(pred.data.iter(), gt.data.iter()))
}

pub fn seg_iou_per_class(pred: &BevGrid, gt: &BevGrid) -> Result<Vec<f64>> {
    check_binary_pair(pred, gt)?;
    let c = pred.channels;
    Ok((0..c)
        .map(|k| iou_counts(pred.data.iter().skip(k).step_by(c), gt.data.iter().skip(k).step_by(c)))
        .collect())
}

/// 1.0 where the value exceeds `threshold`, else 0.0.
pub fn binarize(grid: &BevGrid, threshold: f32) -> BevGrid {
    BevGrid {
        nx: grid.nx,
        ny: grid.ny,
        channels: grid.channels,
        data: grid.data.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect(),
    }
}

fn center_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// True-positive flags of `preds` in descending-score order (ties by input
/// order). Each prediction takes the nearest unmatched ground truth of its
/// class strictly closer than `threshold`.
pub fn match_by_center_distance(preds: &[Box3D], gts: &[Box3D], threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].score.total_cmp(&preds[i].score).then(i.cmp(&j)));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let p = &preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.class_id != p.class_id {
                    continue;
                }
                let d = center_distance(p, gt);
                if d < threshold && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((g, d));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated AP from ranked true-positive flags.
pub fn interpolated_ap(tp_flags: &[bool], num_gts: usize) -> f64 {
    if num_gts == 0 {
        return 0.0;
    }
    let mut points = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / num_gts as f64, tp as f64 / (k + 1) as f64));
    }
    // Precision envelope from the right.
    let mut envelope = vec![0.0; points.len()];
    let mut best = 0.0f64;
    for k in (0..points.len()).rev() {
        best = best.max(points[k].1);
        envelope[k] = best;
    }
    let mut sum = 0.0;
    let mut k = 0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        while k < points.len() && points[k].0 < r - 1e-12 {
            k += 1;
        }
        if k < points.len() {
            sum += envelope[k];
        }
    }
    sum / 101.0
}

/// Per-class, per-threshold AP for classes present in `gts`, averaged into `map`.
pub fn center_distance_ap(preds: &[Box3D], gts: &[Box3D], thresholds: &[f64]) -> EvalResult {
    let classes: Vec<u32> = gts.iter().map(|g| g.class_id).collect::<BTreeSet<_>>().into_iter().collect();
    let mut table = Vec::with_capacity(classes.len());
    for &c in &classes {
        let p: Vec<Box3D> = preds.iter().filter(|b| b.class_id == c).copied().collect();
        let g: Vec<Box3D> = gts.iter().filter(|b| b.class_id == c).copied().collect();
        table.push(
            thresholds
                .iter()
                .map(|&t| interpolated_ap(&match_by_center_distance(&p, &g, t), g.len()))
                .collect::<Vec<f64>>(),
        );
    }
    let cells: Vec<f64> = table.iter().flatten().copied().collect();
    let map = if cells.is_empty() {
        0.0
    } else {
        cells.iter().sum::<f64>() / cells.len() as f64
    };
    EvalResult {
        seg_iou_per_class: Vec::new(),
        classes,
        thresholds: thresholds.to_vec(),
        ap_per_class_per_threshold: table,
        map,
    }
}

/// Detection AP plus optional per-class segmentation IoU.
pub fn evaluate(
    preds: &[Box3D],
    gts: &[Box3D],
    thresholds: &[f64],
    seg: Option<(&BevGrid, &BevGrid)>,
) -> Result<EvalResult> {
    let mut r = center_distance_ap(preds, gts, thresholds);
    if let Some((p, g)) = seg {
        r.seg_iou_per_class = seg_iou_per_class(p, g)?;
    }
    Ok(r)
}
