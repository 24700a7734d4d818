//! Slow reference implementations used by the test suite and `bevkit selftest`.
//!
//! Each function recomputes a result with the most direct algorithm available
//! and shares as little code as possible with the implementation it checks.

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assign::{joint_quality, AnchorLabel, AnchorPrediction, DynamicConfig};
use crate::boxes::{bev_iou, Box3D, NmsConfig};
use crate::camera::CameraRig;
use crate::error::Result;
use crate::voxel::{FeatureImage, Fusion, Sampling, UnprojectOptions, VoxelGrid, VoxelGridSpec};

/// Per-voxel, per-camera unprojection loop.
pub fn unproject_reference(
    rig: &CameraRig,
    features: &[FeatureImage],
    spec: &VoxelGridSpec,
    opts: UnprojectOptions,
) -> Result<VoxelGrid> {
    let scaled = CameraRig::new(
        rig.cameras()
            .iter()
            .zip(features)
            .map(|(c, f)| c.at_resolution(f.width as u32, f.height as u32))
            .collect(),
    )?;
    let c = features[0].channels;
    let mut grid = VoxelGrid::zeros(*spec, c);
    for ix in 0..spec.nx {
        for iy in 0..spec.ny {
            for iz in 0..spec.nz {
                let p = Vector3::from(spec.cell_center(ix, iy, iz));
                let mut acc = vec![0.0f32; c];
                let mut hits = 0u32;
                for (i, f) in features.iter().enumerate() {
                    let Some(proj) = scaled.project_point(i, &p)? else {
                        continue;
                    };
                    hits += 1;
                    if opts.fusion == Fusion::First && hits > 1 {
                        continue;
                    }
                    let s = sample_reference(f, proj.u, proj.v, opts.sampling);
                    for k in 0..c {
                        acc[k] += s[k];
                    }
                }
                if opts.fusion == Fusion::Average && hits > 1 {
                    for a in acc.iter_mut() {
                        *a /= hits as f32;
                    }
                }
                let idx = grid.voxel_index(ix, iy, iz);
                grid.data[idx * c..(idx + 1) * c].copy_from_slice(&acc);
                grid.hit_count[idx] = hits;
            }
        }
    }
    Ok(grid)
}

fn sample_reference(f: &FeatureImage, u: f64, v: f64, mode: Sampling) -> Vec<f32> {
    let at = |row: usize, col: usize, k: usize| f.data[(row * f.width + col) * f.channels + k];
    match mode {
        Sampling::Nearest => {
            let col = (u.round() as usize).min(f.width - 1);
            let row = (v.round() as usize).min(f.height - 1);
            (0..f.channels).map(|k| at(row, col, k)).collect()
        }
        Sampling::Bilinear => {
            let c0 = u.floor() as usize;
            let r0 = v.floor() as usize;
            let au = (u - u.floor()) as f32;
            let av = (v - v.floor()) as f32;
            let c1 = if c0 + 1 < f.width { c0 + 1 } else { c0 };
            let r1 = if r0 + 1 < f.height { r0 + 1 } else { r0 };
            (0..f.channels)
                .map(|k| {
                    let top = at(r0, c0, k) * (1.0 - au) + at(r0, c1, k) * au;
                    let bottom = at(r1, c0, k) * (1.0 - au) + at(r1, c1, k) * au;
                    top * (1.0 - av) + bottom * av
                })
                .collect()
        }
    }
}

/// Monte-Carlo BEV IoU from a jittered `n_side x n_side` stratified sample of
/// the bounding rectangle of both footprints.
pub fn mc_bev_iou(a: &Box3D, b: &Box3D, n_side: usize, seed: u64) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for bx in [a, b] {
        let r = 0.5 * bx.w.hypot(bx.l);
        x0 = x0.min(bx.x - r);
        y0 = y0.min(bx.y - r);
        x1 = x1.max(bx.x + r);
        y1 = y1.max(bx.y + r);
    }
    let (dx, dy) = ((x1 - x0) / n_side as f64, (y1 - y0) / n_side as f64);
    let inside = |bx: &Box3D| {
        let (c, s) = (bx.theta.cos(), bx.theta.sin());
        let (cx, cy, hl, hw) = (bx.x, bx.y, bx.l / 2.0, bx.w / 2.0);
        move |x: f64, y: f64| {
            let (px, py) = (x - cx, y - cy);
            (c * px + s * py).abs() <= hl && (c * py - s * px).abs() <= hw
        }
    };
    let (in_a, in_b) = (inside(a), inside(b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inter, mut union) = (0u64, 0u64);
    for i in 0..n_side {
        for j in 0..n_side {
            let x = x0 + (i as f64 + rng.random::<f64>()) * dx;
            let y = y0 + (j as f64 + rng.random::<f64>()) * dy;
            let (ia, ib) = (in_a(x, y), in_b(x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Quadratic greedy NMS over all boxes at once.
pub fn nms_reference(boxes: &[Box3D], cfg: &NmsConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].score >= cfg.score_threshold).collect();
    // Insertion sort: descending score, ascending index.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && boxes[order[j]].score > boxes[order[j - 1]].score {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut keep: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = keep
            .iter()
            .any(|&k| boxes[k].class_id == boxes[i].class_id && bev_iou(&boxes[k], &boxes[i]) > cfg.iou_threshold);
        if !suppressed {
            keep.push(i);
        }
    }
    keep.truncate(cfg.max_out);
    let mut out = Vec::with_capacity(keep.len());
    let mut classes: Vec<u32> = keep.iter().map(|&i| boxes[i].class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        out.extend(keep.iter().copied().filter(|&i| boxes[i].class_id == c));
    }
    out
}

fn best_gt(ious: &[f64]) -> (usize, f64) {
    let mut best = (0, ious[0]);
    for (g, &v) in ious.iter().enumerate() {
        if v > best.1 {
            best = (g, v);
        }
    }
    best
}

/// Dense labels of the fixed-threshold assignment with best-anchor rescue.
pub fn fixed_assign_reference(anchors: &[Box3D], gts: &[Box3D], pos_thr: f64, neg_thr: f64) -> Vec<AnchorLabel> {
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    if gts.is_empty() {
        return labels;
    }
    for (a, anchor) in anchors.iter().enumerate() {
        let ious: Vec<f64> = gts.iter().map(|g| bev_iou(anchor, g)).collect();
        let (g, v) = best_gt(&ious);
        if v >= pos_thr {
            labels[a] = AnchorLabel::Positive(g);
        } else if v >= neg_thr {
            labels[a] = AnchorLabel::Ignored;
        }
    }
    for (g, gt) in gts.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (a, anchor) in anchors.iter().enumerate() {
            let v = bev_iou(anchor, gt);
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        }
        if let Some((a, _)) = best {
            labels[a] = AnchorLabel::Positive(g);
        }
    }
    labels
}

/// Dense labels of the dynamic assignment: full-sort bags and repeated
/// best-remaining-pair selection.
pub fn dynamic_assign_reference(
    anchors: &[Box3D],
    gts: &[Box3D],
    preds: &AnchorPrediction,
    cfg: &DynamicConfig,
) -> Vec<AnchorLabel> {
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    if gts.is_empty() {
        return labels;
    }
    let bags: Vec<Vec<usize>> = gts
        .iter()
        .map(|gt| {
            let mut cand: Vec<(f64, usize)> = anchors
                .iter()
                .enumerate()
                .map(|(a, anchor)| (bev_iou(anchor, gt), a))
                .filter(|&(v, _)| v > 0.0)
                .collect();
            cand.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            cand.into_iter().take(cfg.bag_size).map(|(_, a)| a).collect()
        })
        .collect();
    for (a, anchor) in anchors.iter().enumerate() {
        if gts.iter().any(|g| bev_iou(anchor, g) >= cfg.ignore_iou) {
            labels[a] = AnchorLabel::Ignored;
        }
    }
    let quality = |g: usize, a: usize| {
        joint_quality(
            preds.score(a, gts[g].class_id),
            bev_iou(&preds.loc_boxes[a], &gts[g]),
            cfg.score_weight,
        )
    };
    let mut gt_done = vec![false; gts.len()];
    let mut anchor_done = vec![false; anchors.len()];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (g, bag) in bags.iter().enumerate() {
            if gt_done[g] {
                continue;
            }
            for &a in bag {
                if anchor_done[a] {
                    continue;
                }
                let q = quality(g, a);
                // Strict improvement keeps the lowest (gt, anchor) among ties.
                if best.is_none_or(|(bq, _, _)| q > bq) {
                    best = Some((q, g, a));
                }
            }
        }
        let Some((_, g, a)) = best else { break };
        gt_done[g] = true;
        anchor_done[a] = true;
        labels[a] = AnchorLabel::Positive(g);
    }
    labels
}

/// Center-distance AP by direct scans: greedy matching in score order, then
/// the 101-point precision envelope evaluated from its definition. Returns
/// `(per-class rows for classes with ground truth, mean)`.
pub fn ap_reference(preds: &[Box3D], gts: &[Box3D], thresholds: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let mut classes: Vec<u32> = gts.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut rows = Vec::new();
    for &c in &classes {
        let mut p: Vec<(usize, &Box3D)> = preds.iter().enumerate().filter(|(_, b)| b.class_id == c).collect();
        p.sort_by(|x, y| y.1.score.partial_cmp(&x.1.score).unwrap().then(x.0.cmp(&y.0)));
        let g: Vec<&Box3D> = gts.iter().filter(|b| b.class_id == c).collect();
        let row = thresholds
            .iter()
            .map(|&t| {
                let mut used = vec![false; g.len()];
                let mut curve = Vec::new();
                let mut tp = 0.0;
                for (k, (_, pred)) in p.iter().enumerate() {
                    let mut pick: Option<usize> = None;
                    for j in 0..g.len() {
                        let d = ((pred.x - g[j].x).powi(2) + (pred.y - g[j].y).powi(2)).sqrt();
                        let better = match pick {
                            None => true,
                            Some(q) => d < ((pred.x - g[q].x).powi(2) + (pred.y - g[q].y).powi(2)).sqrt(),
                        };
                        if !used[j] && d < t && better {
                            pick = Some(j);
                        }
                    }
                    if let Some(j) = pick {
                        used[j] = true;
                        tp += 1.0;
                    }
                    curve.push((tp / g.len() as f64, tp / (k + 1) as f64));
                }
                (0..=100)
                    .map(|s| {
                        let r = s as f64 / 100.0;
                        curve
                            .iter()
                            .filter(|(rec, _)| *rec >= r - 1e-12)
                            .map(|&(_, prec)| prec)
                            .fold(0.0, f64::max)
                    })
                    .sum::<f64>()
                    / 101.0
            })
            .collect::<Vec<f64>>();
        rows.push(row);
    }
    let cells: Vec<f64> = rows.iter().flatten().copied().collect();
    let mean = if cells.is_empty() {
        0.0
    } else {
        cells.iter().sum::<f64>() / cells.len() as f64
    };
    (rows, mean)
}

/// Central finite difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central differences of `f` with respect to each coordinate of `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
