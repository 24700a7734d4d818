//! Deterministic synthetic scenes: an outward-facing camera ring, oriented
//! boxes placed on a drivable area, a two-channel BEV map (drivable, lane) and
//! per-camera feature images rendered by ray casting.
//!
//! Rendered feature channels, for `K` object classes:
//! - `0`: drivable area under the pixel's ground-plane intersection
//! - `1`: lane line under the pixel's ground-plane intersection
//! - `2 .. 2+K`: one-hot class of the nearest box hit by the pixel ray
//! - `2+K .. 2+2K`: one-hot class of the box footprint containing the ground
//!   intersection
//!
//! Randomness comes from ChaCha8 streams keyed by the scene seed, one stream
//! per purpose, so changing one part of the generator leaves the others intact.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::boxes::{bev_intersection, Box3D};
use crate::camera::{Camera, CameraRig, Extrinsics, Intrinsics};
use crate::error::{BevError, Result};
use crate::voxel::{BevGrid, FeatureImage, VoxelGridSpec};

pub const MAP_DRIVABLE: usize = 0;
pub const MAP_LANE: usize = 1;
pub const MAP_CHANNELS: usize = 2;

pub const CLASS_NAMES: [&str; 3] = ["car", "pedestrian", "bicycle"];

/// Mean `(w, l, h)` per class in meters.
pub const CLASS_SIZES: [[f64; 3]; 3] = [[1.9, 4.6, 1.7], [0.65, 0.7, 1.75], [0.6, 1.75, 1.3]];

const CLASS_WEIGHTS: [f64; 3] = [0.6, 0.25, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Rig = 1,
    Boxes = 2,
    Map = 3,
    Noise = 4,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn feature_channels(num_classes: usize) -> usize {
    2 + 2 * num_classes
}

pub fn hit_channel(class_id: u32) -> usize {
    2 + class_id as usize
}

pub fn footprint_channel(class_id: u32, num_classes: usize) -> usize {
    2 + num_classes + class_id as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_cameras: usize,
    pub n_boxes: usize,
    pub grid: VoxelGridSpec,
    /// Full image size the intrinsics refer to.
    pub image_size: (u32, u32),
    /// Feature maps are `image_size / feature_stride`.
    pub feature_stride: u32,
    pub horizontal_fov_deg: f64,
    pub camera_height: f64,
    /// Distance of each camera from the ego origin.
    pub camera_radius: f64,
    /// Downward tilt of every camera, radians.
    pub camera_pitch: f64,
    pub n_lanes: usize,
    /// Keep every box footprint on the drivable area.
    pub constrained_placement: bool,
    /// Boxes are kept this far apart (meters, footprint to footprint).
    pub min_gap: f64,
    /// No box center closer than this to the ego origin.
    pub ego_clearance: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_cameras: 6,
            n_boxes: 20,
            grid: desk_grid(),
            image_size: (1600, 900),
            feature_stride: 4,
            horizontal_fov_deg: 70.0,
            camera_height: 1.6,
            camera_radius: 1.0,
            camera_pitch: 0.1,
            n_lanes: 3,
            constrained_placement: true,
            min_gap: 0.75,
            ego_clearance: 4.0,
        }
    }
}

/// 80 x 80 x 4 grid of 0.5 m cubes over x, y in [-20, 20) m with a layer
/// centered on the ground plane.
pub fn desk_grid() -> VoxelGridSpec {
    VoxelGridSpec {
        nx: 80,
        ny: 80,
        nz: 4,
        voxel_size: [0.5, 0.5, 0.5],
        origin: [-20.0, -20.0, -0.25],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub grid: VoxelGridSpec,
    pub rig: CameraRig,
    pub gt_boxes: Vec<Box3D>,
    /// Binary channels: drivable area, lane.
    pub map_mask: BevGrid,
    pub feature_images: Vec<FeatureImage>,
    pub num_classes: usize,
}

pub fn generate_scene(seed: u64, n_cameras: usize, n_boxes: usize, grid: &VoxelGridSpec) -> Result<SyntheticScene> {
    generate_scene_with(
        seed,
        &SceneConfig {
            n_cameras,
            n_boxes,
            grid: *grid,
            ..SceneConfig::default()
        },
    )
}

pub fn generate_scene_with(seed: u64, cfg: &SceneConfig) -> Result<SyntheticScene> {
    if cfg.n_cameras == 0 {
        return Err(BevError::InvalidArgument("scene needs at least one camera".into()));
    }
    cfg.grid.validate()?;
    let rig = ring_rig(seed, cfg)?;
    let map_mask = generate_map(seed, cfg);
    let gt_boxes = place_boxes(seed, cfg, &map_mask);
    let feature_images = render_features(&rig, &gt_boxes, &map_mask, &cfg.grid, CLASS_NAMES.len(), cfg.feature_stride);
    Ok(SyntheticScene {
        seed,
        grid: cfg.grid,
        rig,
        gt_boxes,
        map_mask,
        feature_images,
        num_classes: CLASS_NAMES.len(),
    })
}

/// Outward-facing cameras evenly spaced in yaw, with a small seeded yaw jitter.
pub fn ring_rig(seed: u64, cfg: &SceneConfig) -> Result<CameraRig> {
    let mut rng = rng_for(seed, Stream::Rig);
    let (w, h) = cfg.image_size;
    let fx = (w as f64 / 2.0) / (cfg.horizontal_fov_deg.to_radians() / 2.0).tan();
    let intrinsics = Intrinsics::new(fx, fx, w as f64 / 2.0, h as f64 / 2.0, w, h)?;
    let n = cfg.n_cameras;
    let cams = (0..n)
        .map(|i| {
            let jitter = rng.random_range(-0.02..0.02);
            let yaw = 2.0 * PI * i as f64 / n as f64 + jitter;
            let pos = Vector3::new(cfg.camera_radius * yaw.cos(), cfg.camera_radius * yaw.sin(), cfg.camera_height);
            Camera {
                intrinsics,
                extrinsics: Extrinsics::looking_at_yaw(pos, yaw, cfg.camera_pitch),
            }
        })
        .collect();
    CameraRig::new(cams)
}

fn point_in_polygon(poly: &[Vector2<f64>], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Cells visited by Bresenham's line between two cell coordinates.
fn raster_line(a: (i64, i64), b: (i64, i64), mut visit: impl FnMut(i64, i64)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - x).abs();
    let dy = -(b.1 - y).abs();
    let sx = if x < b.0 { 1 } else { -1 };
    let sy = if y < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        visit(x, y);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Star-shaped drivable polygon around the ego vehicle plus lane polylines.
pub fn generate_map(seed: u64, cfg: &SceneConfig) -> BevGrid {
    let mut rng = rng_for(seed, Stream::Map);
    let g = &cfg.grid;
    let mut mask = BevGrid::zeros(g.nx, g.ny, MAP_CHANNELS);
    let half_x = g.nx as f64 * g.voxel_size[0] / 2.0;
    let half_y = g.ny as f64 * g.voxel_size[1] / 2.0;
    let mid = (g.origin[0] + half_x, g.origin[1] + half_y);
    let reach = half_x.min(half_y);

    let n_vertices = rng.random_range(8..15usize);
    let polygon: Vec<Vector2<f64>> = (0..n_vertices)
        .map(|i| {
            let angle = 2.0 * PI * (i as f64 + rng.random_range(0.0..0.6)) / n_vertices as f64;
            let r = reach * rng.random_range(0.35..0.95);
            Vector2::new(mid.0 + r * angle.cos(), mid.1 + r * angle.sin())
        })
        .collect();
    for ix in 0..g.nx {
        for iy in 0..g.ny {
            let [x, y, _] = g.cell_center(ix, iy, 0);
            if point_in_polygon(&polygon, x, y) {
                mask.set(ix, iy, MAP_DRIVABLE, 1.0);
            }
        }
    }

    for _ in 0..cfg.n_lanes {
        let heading = rng.random_range(-PI..PI);
        let offset = rng.random_range(-0.6..0.6) * reach;
        let (s, c) = heading.sin_cos();
        let n_pts = rng.random_range(3..6usize);
        let pts: Vec<(i64, i64)> = (0..n_pts)
            .map(|k| {
                let t = -reach + 2.0 * reach * k as f64 / (n_pts - 1) as f64;
                let wobble = rng.random_range(-0.08..0.08) * reach;
                let x = mid.0 + c * t - s * (offset + wobble);
                let y = mid.1 + s * t + c * (offset + wobble);
                (
                    ((x - g.origin[0]) / g.voxel_size[0]).floor() as i64,
                    ((y - g.origin[1]) / g.voxel_size[1]).floor() as i64,
                )
            })
            .collect();
        for w in pts.windows(2) {
            raster_line(w[0], w[1], |x, y| {
                if x >= 0 && y >= 0 && (x as usize) < g.nx && (y as usize) < g.ny {
                    mask.set(x as usize, y as usize, MAP_LANE, 1.0);
                }
            });
        }
    }
    mask
}

/// BEV cells whose centers fall inside the box footprint.
pub fn footprint_cells(b: &Box3D, grid: &VoxelGridSpec) -> Vec<(usize, usize)> {
    let fp = b.footprint();
    let (mut lo, mut hi) = (fp[0], fp[0]);
    for p in &fp[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let mut out = Vec::new();
    let ix0 = ((lo.x - grid.origin[0]) / grid.voxel_size[0]).floor().max(0.0) as usize;
    let iy0 = ((lo.y - grid.origin[1]) / grid.voxel_size[1]).floor().max(0.0) as usize;
    let ix1 = (((hi.x - grid.origin[0]) / grid.voxel_size[0]).ceil().max(0.0) as usize).min(grid.nx);
    let iy1 = (((hi.y - grid.origin[1]) / grid.voxel_size[1]).ceil().max(0.0) as usize).min(grid.ny);
    for ix in ix0..ix1 {
        for iy in iy0..iy1 {
            let [x, y, _] = grid.cell_center(ix, iy, 0);
            if b.footprint_contains(x, y) {
                out.push((ix, iy));
            }
        }
    }
    out
}

fn sample_class(rng: &mut ChaCha8Rng) -> u32 {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in CLASS_WEIGHTS.iter().enumerate() {
        acc += w;
        if r < acc {
            return k as u32;
        }
    }
    (CLASS_WEIGHTS.len() - 1) as u32
}

fn place_boxes(seed: u64, cfg: &SceneConfig, map: &BevGrid) -> Vec<Box3D> {
    const ATTEMPTS_PER_BOX: usize = 200;
    let mut rng = rng_for(seed, Stream::Boxes);
    let g = &cfg.grid;
    let (x0, y0) = (g.origin[0], g.origin[1]);
    let (x1, y1) = (x0 + g.nx as f64 * g.voxel_size[0], y0 + g.ny as f64 * g.voxel_size[1]);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(cfg.n_boxes);
    let mut attempts = 0;
    while boxes.len() < cfg.n_boxes && attempts < ATTEMPTS_PER_BOX * cfg.n_boxes {
        attempts += 1;
        let class_id = sample_class(&mut rng);
        let [w, l, h] = CLASS_SIZES[class_id as usize].map(|s| s * rng.random_range(0.9..1.1));
        let margin = w.hypot(l) / 2.0;
        if x1 - x0 <= 2.0 * margin || y1 - y0 <= 2.0 * margin {
            continue;
        }
        let x = rng.random_range(x0 + margin..x1 - margin);
        let y = rng.random_range(y0 + margin..y1 - margin);
        let theta = rng.random_range(-PI..PI);
        let speed = rng.random_range(0.0..[8.0, 1.5, 4.0][class_id as usize]);
        let b = Box3D::new(x, y, h / 2.0, w, l, h, theta)
            .with_class(class_id)
            .with_velocity(speed * theta.cos(), speed * theta.sin());
        if x.hypot(y) < cfg.ego_clearance {
            continue;
        }
        let cells = footprint_cells(&b, g);
        if cells.is_empty() {
            continue;
        }
        if cfg.constrained_placement && !cells.iter().any(|&(ix, iy)| map.get(ix, iy, MAP_DRIVABLE) == 1.0) {
            continue;
        }
        let grown = |b: &Box3D| Box3D {
            w: b.w + cfg.min_gap,
            l: b.l + cfg.min_gap,
            ..*b
        };
        if boxes.iter().any(|o| bev_intersection(&grown(o), &grown(&b)) > 0.0) {
            continue;
        }
        boxes.push(b);
    }
    boxes
}

/// Ray-casts every feature pixel of every camera against the boxes and the
/// ground plane `z = 0`.
pub fn render_features(
    rig: &CameraRig,
    boxes: &[Box3D],
    map: &BevGrid,
    grid: &VoxelGridSpec,
    num_classes: usize,
    feature_stride: u32,
) -> Vec<FeatureImage> {
    let channels = feature_channels(num_classes);
    rig.cameras()
        .iter()
        .enumerate()
        .map(|(ci, cam)| {
            let (fw, fh) = (
                (cam.intrinsics.width / feature_stride).max(1),
                (cam.intrinsics.height / feature_stride).max(1),
            );
            let fcam = cam.at_resolution(fw, fh);
            let mut img = FeatureImage::zeros(ci, fh as usize, fw as usize, channels);
            img.data
                .par_chunks_mut(fw as usize * channels)
                .enumerate()
                .for_each(|(row, line)| {
                    for col in 0..fw as usize {
                        let px = &mut line[col * channels..(col + 1) * channels];
                        shade_pixel(&fcam, col as f64, row as f64, boxes, map, grid, num_classes, px);
                    }
                });
            img
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn shade_pixel(
    cam: &Camera,
    u: f64,
    v: f64,
    boxes: &[Box3D],
    map: &BevGrid,
    grid: &VoxelGridSpec,
    num_classes: usize,
    px: &mut [f32],
) {
    let (origin, dir) = cam.ray_unbounded(u, v);
    let nearest = boxes
        .iter()
        .filter_map(|b| b.ray_hit(&origin, &dir).map(|t| (t, b.class_id)))
        .fold(None, |best: Option<(f64, u32)>, hit| match best {
            Some(b) if b.0 <= hit.0 => Some(b),
            _ => Some(hit),
        });
    if let Some((_, class_id)) = nearest {
        px[hit_channel(class_id)] = 1.0;
    }
    if dir.z < -1e-12 {
        let t = -origin.z / dir.z;
        let g = origin + dir * t;
        if let Some((ix, iy)) = grid.bev_cell_of(g.x, g.y) {
            px[MAP_DRIVABLE] = map.get(ix, iy, MAP_DRIVABLE);
            px[MAP_LANE] = map.get(ix, iy, MAP_LANE);
            if let Some(b) = boxes.iter().find(|b| b.footprint_contains(g.x, g.y)) {
                px[footprint_channel(b.class_id, num_classes)] = 1.0;
            }
        }
    }
}

/// Calibration error model. `sigma` scales both the rotation perturbation
/// (radians) and the translation jitter (meters per axis).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub levels: Vec<f64>,
    pub rotation: bool,
    pub translation: bool,
}

pub const DEFAULT_NOISE_LEVELS: [f64; 5] = [1e-3, 1e-2, 5e-2, 1e-1, 2e-1];

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            levels: DEFAULT_NOISE_LEVELS.to_vec(),
            rotation: true,
            translation: true,
        }
    }
}

impl NoiseSpec {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }
}

/// Perturbs every camera's extrinsics: a rotation about a uniform random axis
/// by `|N(0, sigma^2)|` clamped to `3 sigma`, composed in the camera frame,
/// and `N(0, sigma^2)` translation jitter per axis. `sigma = 0` returns the
/// rig unchanged.
pub fn perturb_extrinsics(rig: &CameraRig, noise: &NoiseSpec, seed: u64) -> Result<CameraRig> {
    let sigma = noise.sigma;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(BevError::InvalidArgument(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(rig.clone());
    }
    let mut rng = rng_for(seed, Stream::Noise);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    Ok(rig.map_extrinsics(|_, e| {
        // Draw every variate unconditionally so the switches do not shift the stream.
        let axis = Vector3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng));
        let angle = (unit.sample(&mut rng) * sigma).abs().min(3.0 * sigma);
        let jitter = Vector3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng)) * sigma;
        let mut out = *e;
        if noise.rotation && axis.norm() > 0.0 {
            let dr = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
            out.rotation = dr.matrix() * e.rotation;
            out.translation = dr * e.translation;
        }
        if noise.translation {
            out.translation += jitter;
        }
        out
    }))
}

/// Mean pixel displacement of `points` between two rigs, over every
/// (camera, point) pair that projects in front of both.
pub fn reprojection_error(reference: &CameraRig, perturbed: &CameraRig, points: &[Vector3<f64>]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in reference.cameras().iter().zip(perturbed.cameras()) {
        for p in points {
            if let (Some(pa), Some(pb)) = (a.project(p), b.project_unbounded(p)) {
                sum += (pa.u - pb.u).hypot(pa.v - pb.v);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SceneConfig {
        SceneConfig {
            image_size: (320, 180),
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_scene_with(7, &small_cfg()).unwrap();
        let b = generate_scene_with(7, &small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = generate_scene_with(8, &small_cfg()).unwrap();
        assert_ne!(a.gt_boxes, c.gt_boxes);
    }

    #[test]
    fn empty_scene() {
        let cfg = SceneConfig {
            n_boxes: 0,
            ..small_cfg()
        };
        let s = generate_scene_with(1, &cfg).unwrap();
        assert!(s.gt_boxes.is_empty());
        assert_eq!(s.feature_images.len(), 6);
        assert!(generate_scene_with(1, &SceneConfig { n_cameras: 0, ..cfg }).is_err());
    }

    #[test]
    fn map_is_binary_and_boxes_inside_extent() {
        let s = generate_scene_with(3, &small_cfg()).unwrap();
        assert!(s.map_mask.data.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(s.map_mask.channel(MAP_DRIVABLE).data.contains(&1.0));
        assert!(s.map_mask.channel(MAP_LANE).data.contains(&1.0));
        assert!(!s.gt_boxes.is_empty());
        for b in &s.gt_boxes {
            for c in b.footprint() {
                assert!(s.grid.contains_xy(c.x, c.y));
            }
        }
    }

    #[test]
    fn zero_noise_is_identity_and_seeded() {
        let rig = ring_rig(1, &small_cfg()).unwrap();
        assert_eq!(perturb_extrinsics(&rig, &NoiseSpec::with_sigma(0.0), 5).unwrap(), rig);
        let a = perturb_extrinsics(&rig, &NoiseSpec::with_sigma(0.05), 5).unwrap();
        let b = perturb_extrinsics(&rig, &NoiseSpec::with_sigma(0.05), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, rig);
        // Perturbed rotations remain valid.
        CameraRig::new(a.cameras().to_vec()).unwrap();
        assert!(perturb_extrinsics(&rig, &NoiseSpec::with_sigma(-1.0), 5).is_err());
    }

    #[test]
    fn bresenham_is_one_cell_wide() {
        let mut cells = Vec::new();
        raster_line((0, 0), (5, 2), |x, y| cells.push((x, y)));
        assert_eq!(cells.len(), 6);
        assert_eq!(cells.first(), Some(&(0, 0)));
        assert_eq!(cells.last(), Some(&(5, 2)));
    }
}
