//! Oriented 3D boxes, BEV rotated IoU, rotated NMS and the dense anchor lattice.
//!
//! A box's length `l` runs along its heading (yaw `theta`, counter-clockwise
//! from ego +x), width `w` runs across it and height `h` along ego +z.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::voxel::VoxelGridSpec;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub score: f64,
    pub class_id: u32,
}

impl Box3D {
    /// Corner index pairs forming the 12 edges of [`Box3D::corners`].
    pub const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 0),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 4),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];

    pub fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            z,
            w,
            l,
            h,
            theta: normalize_angle(theta),
            vx: 0.0,
            vy: 0.0,
            score: 1.0,
            class_id: 0,
        }
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_velocity(mut self, vx: f64, vy: f64) -> Self {
        self.vx = vx;
        self.vy = vy;
        self
    }

    pub fn is_valid(&self) -> bool {
        let vals = [self.x, self.y, self.z, self.w, self.l, self.h, self.theta, self.vx, self.vy, self.score];
        vals.iter().all(|v| v.is_finite()) && self.w > 0.0 && self.l > 0.0 && self.h > 0.0
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    /// Regression vector in `(x, y, z, w, h, l, theta, vx, vy)` order.
    pub fn to_regression(&self) -> [f64; 9] {
        [self.x, self.y, self.z, self.w, self.h, self.l, self.theta, self.vx, self.vy]
    }

    /// BEV footprint, counter-clockwise, starting at the front-left corner.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        local.map(|(a, b)| Vector2::new(self.x + c * a - s * b, self.y + s * a + c * b))
    }

    /// Bottom face (counter-clockwise footprint) then top face.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let fp = self.footprint();
        let (z0, z1) = (self.z - self.h / 2.0, self.z + self.h / 2.0);
        std::array::from_fn(|i| {
            let p = fp[i % 4];
            Vector3::new(p.x, p.y, if i < 4 { z0 } else { z1 })
        })
    }

    /// Whether the ground-plane point `(px, py)` falls inside the footprint.
    pub fn footprint_contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        let along = c * dx + s * dy;
        let across = -s * dx + c * dy;
        along.abs() <= self.l / 2.0 && across.abs() <= self.w / 2.0
    }

    /// Entry distance of the ray `origin + t * dir` into the solid box, if any.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (s, c) = self.theta.sin_cos();
        let d = origin - self.center();
        let o = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
        let r = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];
        let half = [self.l / 2.0, self.w / 2.0, self.h / 2.0];
        let (mut t0, mut t1) = (0.0_f64, f64::INFINITY);
        for k in 0..3 {
            if r[k].abs() < 1e-15 {
                if o[k].abs() > half[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / r[k];
            let (mut a, mut b) = ((-half[k] - o[k]) * inv, (half[k] - o[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Shoelace area of a simple polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    twice / 2.0
}

/// Sutherland–Hodgman clip of `subject` against a convex counter-clockwise `clip` polygon.
pub fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        let mut prev_side = cross(&a, &b, &prev);
        for &cur in &input {
            let side = cross(&a, &b, &cur);
            if side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(segment_line_intersection(&prev, &cur, prev_side, side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(segment_line_intersection(&prev, &cur, prev_side, side));
            }
            prev = cur;
            prev_side = side;
        }
    }
    output
}

#[inline]
fn segment_line_intersection(p: &Vector2<f64>, q: &Vector2<f64>, dp: f64, dq: f64) -> Vector2<f64> {
    let t = dp / (dp - dq);
    p + (q - p) * t
}

/// Intersection area of two boxes' BEV footprints.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let reach = (a.l.hypot(a.w) + b.l.hypot(b.w)) / 2.0;
    if (a.x - b.x).hypot(a.y - b.y) > reach {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.footprint(), &b.footprint())).max(0.0)
}

/// IoU of the two yaw-rotated BEV rectangles; `z` and `h` are ignored.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    /// A box is suppressed when its IoU with a kept box exceeds this.
    pub iou_threshold: f64,
    /// Boxes scoring below this are dropped before suppression.
    pub score_threshold: f64,
    pub max_out: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.2,
            score_threshold: 0.05,
            max_out: 500,
        }
    }
}

fn by_score_desc(boxes: &[Box3D]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| boxes[j].score.total_cmp(&boxes[i].score).then(i.cmp(&j))
}

/// Rotated NMS returning surviving indices, ordered by class ascending then
/// score descending. Classes are suppressed independently; equal scores keep
/// the lower input index first.
pub fn rotated_nms_indices(boxes: &[Box3D], cfg: &NmsConfig) -> Vec<usize> {
    let mut per_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, b) in boxes.iter().enumerate() {
        if b.score >= cfg.score_threshold {
            per_class.entry(b.class_id).or_default().push(i);
        }
    }
    let groups: Vec<Vec<usize>> = per_class.into_values().collect();
    let mut kept: Vec<usize> = groups
        .into_par_iter()
        .flat_map_iter(|mut idx| {
            idx.sort_by(by_score_desc(boxes));
            let mut keep: Vec<usize> = Vec::new();
            for &i in &idx {
                if keep.iter().all(|&k| bev_iou(&boxes[k], &boxes[i]) <= cfg.iou_threshold) {
                    keep.push(i);
                }
            }
            keep
        })
        .collect();
    if kept.len() > cfg.max_out {
        kept.sort_by(by_score_desc(boxes));
        kept.truncate(cfg.max_out);
    }
    kept.sort_by(|&i, &j| boxes[i].class_id.cmp(&boxes[j].class_id).then(by_score_desc(boxes)(&i, &j)));
    kept
}

pub fn rotated_nms(boxes: &[Box3D], cfg: &NmsConfig) -> Vec<Box3D> {
    rotated_nms_indices(boxes, cfg).into_iter().map(|i| boxes[i]).collect()
}

/// Anchor prototypes tiled over every BEV cell. Sizes are `(w, l, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub sizes: Vec<[f64; 3]>,
    pub rotations: Vec<f64>,
    pub z_center: f64,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            sizes: vec![[0.86, 2.59, 1.0], [0.57, 1.73, 1.0], [1.0, 1.0, 1.0], [0.4, 0.4, 1.0]],
            rotations: vec![0.0, PI / 2.0],
            z_center: 0.0,
        }
    }
}

/// One anchor per (cell, size, rotation); cells in x-major order, then sizes,
/// then rotations. Anchors carry zero velocity and unit score.
pub fn generate_anchors(spec: &AnchorSpec, grid: &VoxelGridSpec) -> Vec<Box3D> {
    let per_cell = spec.sizes.len() * spec.rotations.len();
    let mut out = Vec::with_capacity(grid.nx * grid.ny * per_cell);
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let [cx, cy, _] = grid.cell_center(ix, iy, 0);
            for &[w, l, h] in &spec.sizes {
                for &rot in &spec.rotations {
                    out.push(Box3D::new(cx, cy, spec.z_center, w, l, h, rot));
                }
            }
        }
    }
    out
}
