//! Oracle and invariant checks behind the acceptance suite and `bevkit selftest`.
//!
//! Every check is a deterministic function of its sizes and seed and returns a
//! [`CheckOutcome`] instead of panicking.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assign::{assign_dynamic, assign_fixed_iou, AnchorPrediction, DynamicConfig};
use crate::boxes::{bev_iou, rotated_nms_indices, Box3D, NmsConfig};
use crate::camera::{Camera, CameraRig, Extrinsics, Intrinsics};
use crate::cost::{encoder_cost, EncoderMode};
use crate::error::Result;
use crate::loss::{
    direction_loss, dice_loss, focal_loss, smooth_l1_box, total_loss, weighted_bce_seg, Det2dTerms, DetTerms,
    LossWeights, SegTerms,
};
use crate::oracle;
use crate::pipeline::{generate_scenes, noise_sweep, PipelineConfig, SweepRow};
use crate::scene::{NoiseSpec, SceneConfig, DEFAULT_NOISE_LEVELS};
use crate::voxel::{
    bev_centerness, centerness_value, channel_to_spatial, spatial_to_channel, unproject, FeatureImage, Fusion,
    Sampling, UnprojectOptions, VoxelGrid, VoxelGridSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(id: u32, name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name,
            passed,
            detail,
        }
    }

    fn from_result(id: u32, name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(id, name, passed, detail),
            Err(e) => Self::new(id, name, false, format!("error: {e}")),
        }
    }
}

/// Workload of each check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSizes {
    pub projection_points: usize,
    pub projection_cameras: usize,
    pub unproject_scenes: usize,
    pub rays: usize,
    pub s2c_grids: usize,
    pub centerness_pairs: usize,
    pub iou_pairs: usize,
    /// Monte-Carlo samples per pair are `iou_samples_side^2`.
    pub iou_samples_side: usize,
    pub nms_sets: usize,
    pub nms_set_size: usize,
    pub assign_instances: usize,
    pub rescale_trials: usize,
    pub loss_inputs: usize,
    pub sweep_scenes: usize,
    pub sweep_base_seed: u64,
}

impl CheckSizes {
    /// Sizes used by the acceptance suite.
    pub fn full() -> Self {
        Self {
            projection_points: 10_000,
            projection_cameras: 6,
            unproject_scenes: 50,
            rays: 100,
            s2c_grids: 100,
            centerness_pairs: 1_000,
            iou_pairs: 1_000,
            iou_samples_side: 1_000,
            nms_sets: 200,
            nms_set_size: 50,
            assign_instances: 100,
            rescale_trials: 100,
            loss_inputs: 100,
            sweep_scenes: 20,
            sweep_base_seed: 100,
        }
    }

    /// Reduced workload for quick smoke runs.
    pub fn quick() -> Self {
        Self {
            projection_points: 1_000,
            unproject_scenes: 10,
            rays: 20,
            s2c_grids: 20,
            centerness_pairs: 200,
            iou_pairs: 100,
            iou_samples_side: 300,
            nms_sets: 20,
            assign_instances: 20,
            rescale_trials: 20,
            loss_inputs: 20,
            sweep_scenes: 8,
            ..Self::full()
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rotation(r: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), r.random_range(-PI..PI))
}

fn random_camera(r: &mut ChaCha8Rng) -> Result<Camera> {
    let width = r.random_range(320..1920u32);
    let height = r.random_range(240..1080u32);
    let fx = r.random_range(0.4..1.5) * width as f64;
    let fy = fx * r.random_range(0.95..1.05);
    let cx = width as f64 / 2.0 + r.random_range(-20.0..20.0);
    let cy = height as f64 / 2.0 + r.random_range(-20.0..20.0);
    let intrinsics = Intrinsics::new(fx, fy, cx, cy, width, height)?;
    let rot = random_rotation(r);
    let t = Vector3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
    Ok(Camera {
        intrinsics,
        extrinsics: Extrinsics::new(*rot.matrix(), t)?,
    })
}

/// Criterion 1: `pixel_to_ray` inverts `project_point` on in-frustum points.
pub fn projection_round_trip(points: usize, cameras: usize, seed: u64) -> CheckOutcome {
    const TOL: f64 = 1e-6;
    let run = || -> Result<(bool, String)> {
        let mut r = rng(seed);
        let cams = (0..cameras).map(|_| random_camera(&mut r)).collect::<Result<Vec<_>>>()?;
        let rig = CameraRig::new(cams)?;
        let mut worst = 0.0f64;
        let mut misses = 0usize;
        for n in 0..points {
            let ci = n % cameras;
            let cam = rig.camera(ci)?;
            let k = cam.intrinsics;
            let (u, v) = (r.random_range(0.0..k.width as f64), r.random_range(0.0..k.height as f64));
            let depth = r.random_range(0.5..80.0);
            let p_cam = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
            let e = cam.extrinsics;
            let p = e.rotation.transpose() * (p_cam - e.translation);
            let Some(proj) = rig.project_point(ci, &p)? else {
                misses += 1;
                continue;
            };
            let ray = rig.pixel_to_ray(ci, proj.u, proj.v)?;
            let along = (e.rotation * ray.direction).z;
            let back = ray.at(proj.depth / along);
            worst = worst.max((back - p).norm());
        }
        Ok((
            misses == 0 && worst < TOL,
            format!("{points} points, {cameras} cameras, max error {worst:.3e} m (tol {TOL:e}), {misses} missed"),
        ))
    };
    CheckOutcome::from_result(1, "projection round-trip", run())
}

fn random_unproject_case(r: &mut ChaCha8Rng) -> Result<(CameraRig, Vec<FeatureImage>, VoxelGridSpec, UnprojectOptions)> {
    let spec = VoxelGridSpec::new(
        r.random_range(1..=16),
        r.random_range(1..=16),
        r.random_range(1..=4),
        [r.random_range(0.2..0.6), r.random_range(0.2..0.6), r.random_range(0.2..0.8)],
        [r.random_range(-4.0..-1.0), r.random_range(-4.0..-1.0), r.random_range(-1.0..0.0)],
    )?;
    let center = Vector3::from(spec.cell_center(spec.nx / 2, spec.ny / 2, 0));
    let n_cams = r.random_range(1..=3);
    let mut cams = Vec::with_capacity(n_cams);
    let mut feats = Vec::with_capacity(n_cams);
    for i in 0..n_cams {
        let bearing = r.random_range(-PI..PI);
        let dist = r.random_range(5.0..10.0);
        let pos = center + Vector3::new(dist * bearing.cos(), dist * bearing.sin(), r.random_range(0.5..3.0));
        let to = center - pos;
        let yaw = to.y.atan2(to.x) + r.random_range(-0.2..0.2);
        let pitch = r.random_range(-0.1..0.4);
        let (w, h) = (r.random_range(64..400u32), r.random_range(48..300u32));
        let f = r.random_range(0.5..1.2) * w as f64;
        cams.push(Camera {
            intrinsics: Intrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h)?,
            extrinsics: Extrinsics::looking_at_yaw(pos, yaw, pitch),
        });
        let stride = [1u32, 2, 4, 8][r.random_range(0..4)];
        let (fw, fh) = ((w / stride).max(1) as usize, (h / stride).max(1) as usize);
        let c = r.random_range(1..=5);
        let data = (0..fw * fh * c).map(|_| r.random_range(-1.0f32..1.0)).collect();
        feats.push(FeatureImage::new(i, fh, fw, c, data)?);
    }
    let c = feats[0].channels;
    for f in feats.iter_mut() {
        if f.channels != c {
            let data = (0..f.width * f.height * c).map(|_| r.random_range(-1.0f32..1.0)).collect();
            *f = FeatureImage::new(f.camera_index, f.height, f.width, c, data)?;
        }
    }
    let opts = UnprojectOptions {
        fusion: [Fusion::Average, Fusion::Sum, Fusion::First][r.random_range(0..3)],
        sampling: [Sampling::Bilinear, Sampling::Nearest][r.random_range(0..2)],
    };
    Ok((CameraRig::new(cams)?, feats, spec, opts))
}

fn bitwise_equal(a: &VoxelGrid, b: &VoxelGrid) -> bool {
    a.spec == b.spec
        && a.channels == b.channels
        && a.hit_count == b.hit_count
        && a.data.len() == b.data.len()
        && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Criterion 2: `unproject` equals the per-voxel reference bit for bit.
pub fn unprojection_oracle(scenes: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(seed);
        let (mut mismatches, mut hit_voxels) = (0usize, 0usize);
        for _ in 0..scenes {
            let (rig, feats, spec, opts) = random_unproject_case(&mut r)?;
            let fast = unproject(&rig, &feats, &spec, opts)?;
            let slow = oracle::unproject_reference(&rig, &feats, &spec, opts)?;
            hit_voxels += fast.hit_count.iter().filter(|&&h| h > 0).count();
            mismatches += !bitwise_equal(&fast, &slow) as usize;
        }
        Ok((
            mismatches == 0 && hit_voxels > 0,
            format!("{scenes} scenes, {hit_voxels} observed voxels, {mismatches} mismatching scenes"),
        ))
    };
    CheckOutcome::from_result(2, "unprojection oracle", run())
}

/// Criterion 3: with one camera and nearest sampling, every voxel whose
/// center falls on a sampled pixel's ray carries that pixel's feature.
pub fn uniform_ray(rays: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(seed);
        let k = Intrinsics::new(400.0, 400.0, 400.0, 225.0, 800, 450)?;
        let cam = Camera {
            intrinsics: k,
            extrinsics: Extrinsics::looking_at_yaw(Vector3::new(0.0, 0.0, 1.5), 0.0, 0.05),
        };
        let rig = CameraRig::new(vec![cam])?;
        let (fw, fh, c) = (80usize, 45usize, 3usize);
        let data = (0..fw * fh * c).map(|_| r.random_range(0.0f32..1.0)).collect();
        let feat = FeatureImage::new(0, fh, fw, c, data)?;
        let spec = VoxelGridSpec::new(96, 64, 8, [0.25, 0.25, 0.5], [2.0, -8.0, -1.0])?;
        let opts = UnprojectOptions {
            fusion: Fusion::Average,
            sampling: Sampling::Nearest,
        };
        let grid = unproject(&rig, std::slice::from_ref(&feat), &spec, opts)?;
        let fcam = cam.at_resolution(fw as u32, fh as u32);
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; spec.num_voxels()];
        for ix in 0..spec.nx {
            for iy in 0..spec.ny {
                for iz in 0..spec.nz {
                    let p = Vector3::from(spec.cell_center(ix, iy, iz));
                    if let Some(pr) = fcam.project(&p) {
                        owner[grid.voxel_index(ix, iy, iz)] = Some((pr.v.round() as usize, pr.u.round() as usize));
                    }
                }
            }
        }
        let (mut checked, mut violations, mut multi_depth) = (0usize, 0usize, 0usize);
        let mut attempts = 0;
        let mut sampled = 0;
        while sampled < rays && attempts < 100 * rays {
            attempts += 1;
            let (row, col) = (r.random_range(0..fh), r.random_range(0..fw));
            let on_ray: Vec<usize> = (0..owner.len()).filter(|&i| owner[i] == Some((row.min(fh - 1), col.min(fw - 1)))).collect();
            if on_ray.is_empty() {
                continue;
            }
            sampled += 1;
            let layers: std::collections::BTreeSet<usize> = on_ray.iter().map(|&i| i / spec.nz).collect();
            multi_depth += (layers.len() > 1) as usize;
            for i in on_ray {
                checked += 1;
                if grid.data[i * c..(i + 1) * c] != *feat.pixel(row, col) {
                    violations += 1;
                }
            }
        }
        Ok((
            sampled == rays && violations == 0 && multi_depth > 0,
            format!(
                "{sampled} rays, {checked} voxels checked, {multi_depth} rays spanning several columns, {violations} violations"
            ),
        ))
    };
    CheckOutcome::from_result(3, "uniform depth along rays", run())
}

/// Criterion 4: Spatial-to-Channel round-trips and preserves the element multiset.
pub fn s2c_bijection(grids: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(seed);
        let mut failures = 0usize;
        for _ in 0..grids {
            let spec = VoxelGridSpec::new(
                r.random_range(1..=12),
                r.random_range(1..=12),
                r.random_range(1..=6),
                [0.5; 3],
                [0.0; 3],
            )?;
            let c = r.random_range(1..=6);
            let mut v = VoxelGrid::zeros(spec, c);
            v.data.iter_mut().for_each(|x| *x = r.random_range(-10.0f32..10.0));
            v.hit_count.iter_mut().for_each(|h| *h = r.random_range(0..4));
            let b = spatial_to_channel(&v);
            let back = channel_to_spatial(&b, &spec, Some(&v.hit_count))?;
            let mut layout_ok = b.channels == spec.nz * c;
            for ix in 0..spec.nx {
                for iy in 0..spec.ny {
                    for iz in 0..spec.nz {
                        for ch in 0..c {
                            layout_ok &= b.get(ix, iy, iz * c + ch).to_bits() == v.voxel(ix, iy, iz)[ch].to_bits();
                        }
                    }
                }
            }
            let mut m1: Vec<u32> = v.data.iter().map(|x| x.to_bits()).collect();
            let mut m2: Vec<u32> = b.data.iter().map(|x| x.to_bits()).collect();
            m1.sort_unstable();
            m2.sort_unstable();
            if back != v || m1 != m2 || !layout_ok {
                failures += 1;
            }
        }
        Ok((failures == 0, format!("{grids} grids, {failures} failures")))
    };
    CheckOutcome::from_result(4, "S2C bijection", run())
}

/// Criterion 5: centerness range, reference value and radial monotonicity.
pub fn centerness(pairs: usize, seed: u64) -> CheckOutcome {
    const TOL: f64 = 1e-5;
    let run = || -> Result<(bool, String)> {
        let mut ok = true;
        let mut notes = Vec::new();
        for &(nx, ny) in &[(101usize, 101usize), (64, 48), (7, 12)] {
            let center = ((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0);
            let g = bev_centerness(nx, ny, center)?;
            let min = g.data.iter().copied().fold(f32::INFINITY, f32::min);
            let max = g.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let corners = [(0, 0), (nx - 1, 0), (0, ny - 1), (nx - 1, ny - 1)];
            let range_ok = min >= 1.0 && max == 2.0 && corners.iter().all(|&(x, y)| g.get(x, y, 0) == 2.0);
            let center_ok = nx % 2 == 0 || ny % 2 == 0 || g.get(nx / 2, ny / 2, 0) == 1.0;
            ok &= range_ok && center_ok;
            notes.push(format!("{nx}x{ny}: [{min}, {max}]"));
        }
        let reference = |x: f64, y: f64| 1.0 + ((x - 50.0).powi(2) + (y - 50.0).powi(2)).sqrt() / (2.0f64 * 2500.0).sqrt();
        let mid = centerness_value(101, 101, (50.0, 50.0), (100.0, 50.0));
        let mid_ok = (mid - 1.70711).abs() < TOL && (mid - reference(100.0, 50.0)).abs() < 1e-12;
        ok &= mid_ok;
        notes.push(format!("edge midpoint {mid:.6}"));

        let mut r = rng(seed);
        let mut violations = 0usize;
        let (nx, ny) = (101usize, 81usize);
        let center = (r.random_range(10.0..90.0), r.random_range(10.0..70.0));
        for _ in 0..pairs {
            let a = r.random_range(-PI..PI);
            let (dx, dy) = (a.cos(), a.sin());
            let reach = [
                if dx > 0.0 { ((nx - 1) as f64 - center.0) / dx } else { -center.0 / dx },
                if dy > 0.0 { ((ny - 1) as f64 - center.1) / dy } else { -center.1 / dy },
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            let r1 = r.random_range(0.0..reach);
            let r2 = r.random_range(0.0..reach);
            let (near, far) = (r1.min(r2), r1.max(r2));
            if far - near < 1e-9 {
                continue;
            }
            let v_near = centerness_value(nx, ny, center, (center.0 + near * dx, center.1 + near * dy));
            let v_far = centerness_value(nx, ny, center, (center.0 + far * dx, center.1 + far * dy));
            violations += (v_far <= v_near) as usize;
        }
        ok &= violations == 0;
        notes.push(format!("{pairs} radial pairs, {violations} violations"));
        Ok((ok, notes.join("; ")))
    };
    CheckOutcome::from_result(5, "centerness", run())
}

fn random_box(r: &mut ChaCha8Rng, near: Option<&Box3D>) -> Box3D {
    let (x, y) = match near {
        Some(b) => {
            let reach = 0.6 * b.w.hypot(b.l);
            (b.x + r.random_range(-reach..reach), b.y + r.random_range(-reach..reach))
        }
        None => (r.random_range(-20.0..20.0), r.random_range(-20.0..20.0)),
    };
    Box3D::new(
        x,
        y,
        r.random_range(-1.0..1.0),
        r.random_range(0.3..4.0),
        r.random_range(0.3..6.0),
        r.random_range(0.5..2.5),
        r.random_range(-PI..PI),
    )
}

fn rotate_about(b: &Box3D, pivot: (f64, f64), angle: f64) -> Box3D {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (b.x - pivot.0, b.y - pivot.1);
    Box3D::new(
        pivot.0 + c * dx - s * dy,
        pivot.1 + s * dx + c * dy,
        b.z,
        b.w,
        b.l,
        b.h,
        b.theta + angle,
    )
}

/// Criterion 6: rotated BEV IoU against Monte Carlo, symmetry and rotation equivariance.
pub fn rotated_iou(pairs: usize, samples_side: usize, seed: u64) -> CheckOutcome {
    const MC_TOL: f64 = 1e-3;
    const EXACT_TOL: f64 = 1e-9;
    let mut r = rng(seed);
    let cases: Vec<(Box3D, Box3D, (f64, f64), f64)> = (0..pairs)
        .map(|_| {
            let a = random_box(&mut r, None);
            let b = random_box(&mut r, Some(&a));
            let pivot = (r.random_range(-30.0..30.0), r.random_range(-30.0..30.0));
            (a, b, pivot, r.random_range(-PI..PI))
        })
        .collect();
    let stats: Vec<(f64, f64, f64, bool)> = cases
        .par_iter()
        .enumerate()
        .map(|(i, (a, b, pivot, angle))| {
            let iou = bev_iou(a, b);
            let mc = oracle::mc_bev_iou(a, b, samples_side, seed ^ (i as u64 + 1));
            let sym = (iou - bev_iou(b, a)).abs();
            let rot = (iou - bev_iou(&rotate_about(a, *pivot, *angle), &rotate_about(b, *pivot, *angle))).abs();
            (
                (iou - mc).abs(),
                sym,
                rot,
                iou > 0.0,
            )
        })
        .collect();
    let mc_err = stats.iter().map(|s| s.0).fold(0.0, f64::max);
    let sym = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let rot = stats.iter().map(|s| s.2).fold(0.0, f64::max);
    let overlapping = stats.iter().filter(|s| s.3).count();
    CheckOutcome::new(
        6,
        "rotated IoU",
        mc_err < MC_TOL && sym < EXACT_TOL && rot < EXACT_TOL,
        format!(
            "{pairs} pairs ({overlapping} overlapping), {} MC samples each: max |IoU - MC| {mc_err:.2e} (tol {MC_TOL:e}), symmetry {sym:.1e}, rotation {rot:.1e} (tol {EXACT_TOL:e})",
            samples_side * samples_side
        ),
    )
}

fn random_scored_set(r: &mut ChaCha8Rng, n: usize) -> Vec<Box3D> {
    let seeds: Vec<Box3D> = (0..5).map(|_| random_box(r, None)).collect();
    (0..n)
        .map(|_| {
            let around = &seeds[r.random_range(0..seeds.len())];
            random_box(r, Some(around))
                .with_class(r.random_range(0..3))
                .with_score((r.random_range(0..1000) as f64) / 1000.0)
        })
        .collect()
}

/// Criterion 7: NMS against the quadratic reference, plus antichain and idempotence.
pub fn nms(sets: usize, set_size: usize, seed: u64) -> CheckOutcome {
    let cfg = NmsConfig::default();
    let defaults_ok = cfg.iou_threshold == 0.2 && cfg.score_threshold == 0.05 && cfg.max_out == 500;
    let mut r = rng(seed);
    let (mut mismatches, mut antichain, mut idem) = (0usize, 0usize, 0usize);
    for s in 0..sets {
        let boxes = random_scored_set(&mut r, set_size);
        let cfg = if s % 4 == 3 {
            NmsConfig {
                max_out: 5,
                ..NmsConfig::default()
            }
        } else {
            NmsConfig::default()
        };
        let kept = rotated_nms_indices(&boxes, &cfg);
        mismatches += (kept != oracle::nms_reference(&boxes, &cfg)) as usize;
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                if boxes[a].class_id == boxes[b].class_id && bev_iou(&boxes[a], &boxes[b]) > cfg.iou_threshold {
                    antichain += 1;
                }
            }
        }
        let survivors: Vec<Box3D> = kept.iter().map(|&i| boxes[i]).collect();
        let again = rotated_nms_indices(&survivors, &cfg);
        idem += (again != (0..survivors.len()).collect::<Vec<_>>()) as usize;
    }
    CheckOutcome::new(
        7,
        "rotated NMS",
        defaults_ok && mismatches == 0 && antichain == 0 && idem == 0,
        format!(
            "{sets} sets of {set_size}: {mismatches} reference mismatches, {antichain} antichain violations, {idem} non-idempotent; defaults {}",
            if defaults_ok { "0.2/0.05/500" } else { "WRONG" }
        ),
    )
}

fn random_assignment_case(r: &mut ChaCha8Rng) -> Result<(Vec<Box3D>, Vec<Box3D>, AnchorPrediction)> {
    let n_gts = r.random_range(0..=10);
    let n_anchors = r.random_range(1..=200);
    let gts: Vec<Box3D> = (0..n_gts)
        .map(|_| {
            let mut b = random_box(r, None);
            b.x *= 0.3;
            b.y *= 0.3;
            b.with_class(r.random_range(0..3))
        })
        .collect();
    let anchors: Vec<Box3D> = (0..n_anchors)
        .map(|_| {
            if !gts.is_empty() && r.random_range(0.0..1.0) < 0.7 {
                let g = gts[r.random_range(0..gts.len())];
                random_box(r, Some(&g))
            } else {
                let mut b = random_box(r, None);
                b.x *= 0.3;
                b.y *= 0.3;
                b
            }
        })
        .collect();
    let scores = (0..n_anchors * 3).map(|_| r.random_range(0.0..1.0)).collect();
    let loc = anchors
        .iter()
        .map(|a| {
            Box3D::new(
                a.x + r.random_range(-0.5..0.5),
                a.y + r.random_range(-0.5..0.5),
                a.z,
                a.w,
                a.l,
                a.h,
                a.theta + r.random_range(-0.3..0.3),
            )
        })
        .collect();
    Ok((anchors, gts, AnchorPrediction::new(3, scores, loc)?))
}

/// Criterion 8: fixed and dynamic assignment against brute force, and
/// invariance of score-only selection under monotone rescaling.
pub fn assignment(instances: usize, rescale_trials: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(seed);
        let (mut fixed_bad, mut dyn_bad, mut positives) = (0usize, 0usize, 0usize);
        for _ in 0..instances {
            let (anchors, gts, preds) = random_assignment_case(&mut r)?;
            let fixed = assign_fixed_iou(&anchors, &gts, 0.6, 0.45)?;
            fixed_bad += (fixed.labels(anchors.len()) != oracle::fixed_assign_reference(&anchors, &gts, 0.6, 0.45)) as usize;
            let cfg = DynamicConfig {
                bag_size: r.random_range(1..=60),
                ..DynamicConfig::default()
            };
            let dynamic = assign_dynamic(&anchors, &gts, &preds, &cfg)?;
            positives += dynamic.positive.len();
            dyn_bad += (dynamic.labels(anchors.len()) != oracle::dynamic_assign_reference(&anchors, &gts, &preds, &cfg))
                as usize;
        }
        let mut rescale_bad = 0usize;
        for _ in 0..rescale_trials {
            let (anchors, gts, preds) = random_assignment_case(&mut r)?;
            let cfg = DynamicConfig {
                score_weight: 1.0,
                ..DynamicConfig::default()
            };
            let gamma = r.random_range(0.2..5.0);
            let squashed = AnchorPrediction::new(
                preds.num_classes,
                preds.cls_scores.iter().map(|s| s.powf(gamma)).collect(),
                preds.loc_boxes.clone(),
            )?;
            let a = assign_dynamic(&anchors, &gts, &preds, &cfg)?;
            let b = assign_dynamic(&anchors, &gts, &squashed, &cfg)?;
            rescale_bad += (a != b) as usize;
        }
        Ok((
            fixed_bad == 0 && dyn_bad == 0 && rescale_bad == 0,
            format!(
                "{instances} instances: fixed {fixed_bad} / dynamic {dyn_bad} mismatches ({positives} dynamic positives); {rescale_trials} rescaling trials, {rescale_bad} changed"
            ),
        ))
    };
    CheckOutcome::from_result(8, "assignment", run())
}

/// Worst relative gradient error per loss over random inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub rows: Vec<(&'static str, usize, f64)>,
}

/// Central-difference step and relative tolerance of the gradient checks.
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Magnitude below which gradient errors are measured absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn gradient_report(inputs: usize, seed: u64) -> Result<GradientReport> {
    let h = FD_STEP;
    let mut r = rng(seed);
    let mut rows = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let (p, t) = (r.random_range(0.02..0.98), r.random_bool(0.5));
        let (alpha, gamma) = (r.random_range(0.05..0.95), r.random_range(0.0..4.0));
        let g = focal_loss(p, t, alpha, gamma)?.grad;
        let n = oracle::central_difference(|x| focal_loss(x, t, alpha, gamma).unwrap().value, p, h);
        worst = worst.max(oracle::relative_error(g, n, FD_FLOOR));
    }
    rows.push(("focal", inputs, worst));

    let w = LossWeights::default().box_dim_weights;
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let beta = r.random_range(0.05..1.0);
        let target: [f64; 9] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        // Keep every residual clear of the quadratic/linear seam.
        let pred: [f64; 9] = std::array::from_fn(|k| {
            let mut d: f64 = r.random_range(-2.0..2.0);
            while (d.abs() - beta).abs() < 1e-3 {
                d = r.random_range(-2.0..2.0);
            }
            target[k] + d
        });
        let g = smooth_l1_box(&pred, &target, &w, beta)?.grad;
        let n = oracle::numeric_gradient(
            |x| smooth_l1_box(&x.try_into().unwrap(), &target, &w, beta).unwrap().value,
            &pred,
            h,
        );
        for k in 0..9 {
            worst = worst.max(oracle::relative_error(g[k], n[k], FD_FLOOR));
        }
    }
    rows.push(("smooth_l1", inputs, worst));

    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let (x, t) = (r.random_range(-8.0..8.0), r.random_bool(0.5));
        let g = direction_loss(x, t).grad;
        let n = oracle::central_difference(|v| direction_loss(v, t).value, x, h);
        worst = worst.max(oracle::relative_error(g, n, FD_FLOOR));
    }
    rows.push(("direction", inputs, worst));

    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let len = r.random_range(1..=32);
        let p: Vec<f64> = (0..len).map(|_| r.random_range(0.01..0.99)).collect();
        let t: Vec<f64> = (0..len).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let g = dice_loss(&p, &t)?.grad;
        let n = oracle::numeric_gradient(|x| dice_loss(x, &t).unwrap().value, &p, h);
        for k in 0..len {
            worst = worst.max(oracle::relative_error(g[k], n[k], FD_FLOOR));
        }
    }
    rows.push(("dice", inputs, worst));

    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let len = r.random_range(1..=32);
        let p: Vec<f64> = (0..len).map(|_| r.random_range(0.01..0.99)).collect();
        let t: Vec<f64> = (0..len).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let wts: Vec<f64> = (0..len).map(|_| r.random_range(1.0..2.0)).collect();
        let g = weighted_bce_seg(&p, &t, Some(&wts))?.grad;
        let n = oracle::numeric_gradient(|x| weighted_bce_seg(x, &t, Some(&wts)).unwrap().value, &p, h);
        for k in 0..len {
            worst = worst.max(oracle::relative_error(g[k], n[k], FD_FLOOR));
        }
    }
    rows.push(("weighted_bce", inputs, worst));
    Ok(GradientReport { rows })
}

/// Criterion 9: analytic gradients, the focal scalar example and the
/// detection aggregation example.
pub fn losses(inputs: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let report = gradient_report(inputs, seed)?;
        let grads_ok = report.rows.iter().all(|row| row.2 < FD_TOL);
        let focal = focal_loss(0.5, true, 0.25, 2.0)?.value;
        let focal_ok = (focal - 0.043322).abs() < 1e-6;
        let det = total_loss(
            &DetTerms {
                cls: 2.0,
                loc: 0.0,
                dir: 0.0,
                n_pos: 2,
            },
            &SegTerms::default(),
            &Det2dTerms::default(),
            &LossWeights::default(),
        )?
        .det3d;
        let worst = report.rows.iter().map(|row| format!("{} {:.1e}", row.0, row.2)).collect::<Vec<_>>().join(", ");
        Ok((
            grads_ok && focal_ok && det == 1.0,
            format!("{inputs} inputs per loss, worst relative error: {worst} (tol {FD_TOL:e}); focal {focal:.6}; det3d {det}"),
        ))
    };
    CheckOutcome::from_result(9, "loss gradients", run())
}

/// Sweep rows plus the pass/fail verdict of criterion 10.
pub fn noise_sweep_rows(scenes: usize, base_seed: u64) -> Result<Vec<SweepRow>> {
    let cfg = SceneConfig::default();
    let scenes = generate_scenes(base_seed, scenes, &cfg)?;
    noise_sweep(&scenes, &DEFAULT_NOISE_LEVELS, 1, 0, &NoiseSpec::default(), &PipelineConfig::default())
}

pub fn sweep_verdict(rows: &[SweepRow]) -> CheckOutcome {
    const SMALL_DROP: f64 = 0.02;
    let find = |s: f64| rows.iter().find(|r| r.sigma == s);
    let (Some(zero), Some(small), Some(mid), Some(big)) = (find(0.0), find(1e-3), find(1e-2), find(2e-1)) else {
        return CheckOutcome::new(10, "noise sweep", false, "missing sigma levels".into());
    };
    let seg_drop = zero.seg_iou - small.seg_iou;
    let map_drop = zero.map - small.map;
    let passed = seg_drop < SMALL_DROP && map_drop < SMALL_DROP && big.seg_iou < mid.seg_iou && big.map < mid.map;
    CheckOutcome::new(
        10,
        "noise sweep",
        passed,
        format!(
            "drop at 1e-3: seg {:.2} pp, mAP {:.2} pp (limit 2 pp); seg {:.4} -> {:.4}, mAP {:.4} -> {:.4} from 1e-2 to 2e-1",
            100.0 * seg_drop,
            100.0 * map_drop,
            mid.seg_iou,
            big.seg_iou,
            mid.map,
            big.map
        ),
    )
}

/// Criterion 10 over `scenes` seeded scenes.
pub fn noise(scenes: usize, base_seed: u64) -> CheckOutcome {
    match noise_sweep_rows(scenes, base_seed) {
        Ok(rows) => {
            let mut out = sweep_verdict(&rows);
            out.detail = format!("{scenes} scenes: {}", out.detail);
            out
        }
        Err(e) => CheckOutcome::new(10, "noise sweep", false, format!("error: {e}")),
    }
}

/// Criterion 11: S2C + 2D is cheaper than 3D convolution and cost is linear in `nx`.
pub fn cost_model() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let spec = VoxelGridSpec::default();
        let (c, layers, width) = (64, 3, 64);
        let naive = encoder_cost(&spec, c, layers, EncoderMode::Naive3d, width)?;
        let s2c = encoder_cost(&spec, c, layers, EncoderMode::S2c2d, width)?;
        let doubled = VoxelGridSpec {
            nx: 2 * spec.nx,
            ..spec
        };
        let naive2 = encoder_cost(&doubled, c, layers, EncoderMode::Naive3d, width)?;
        let s2c2 = encoder_cost(&doubled, c, layers, EncoderMode::S2c2d, width)?;
        Ok((
            s2c.macs < naive.macs && naive2.macs == 2 * naive.macs && s2c2.macs == 2 * s2c.macs,
            format!(
                "400x400x12, C={c}, {layers} layers: naive3d {:.2} GMAC, s2c2d {:.2} GMAC; doubling nx scales both by exactly 2: {}",
                naive.macs as f64 / 1e9,
                s2c.macs as f64 / 1e9,
                naive2.macs == 2 * naive.macs && s2c2.macs == 2 * s2c.macs
            ),
        ))
    };
    CheckOutcome::from_result(11, "cost model", run())
}

/// Criteria 1 to 11 in order.
pub fn run_all(sizes: &CheckSizes, seed: u64) -> Vec<CheckOutcome> {
    vec![
        projection_round_trip(sizes.projection_points, sizes.projection_cameras, seed),
        unprojection_oracle(sizes.unproject_scenes, seed + 1),
        uniform_ray(sizes.rays, seed + 2),
        s2c_bijection(sizes.s2c_grids, seed + 3),
        centerness(sizes.centerness_pairs, seed + 4),
        rotated_iou(sizes.iou_pairs, sizes.iou_samples_side, seed + 5),
        nms(sizes.nms_sets, sizes.nms_set_size, seed + 6),
        assignment(sizes.assign_instances, sizes.rescale_trials, seed + 7),
        losses(sizes.loss_inputs, seed + 8),
        noise(sizes.sweep_scenes, sizes.sweep_base_seed),
        cost_model(),
    ]
}
