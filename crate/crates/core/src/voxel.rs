//! Multi-view feature unprojection into a voxel grid, Spatial-to-Channel
//! flattening and the BEV centerness weight map.
//!
//! Every voxel center is projected into every camera. Where it lands in frame
//! at positive depth, the camera's feature at that pixel is accumulated. Depth
//! along the pixel ray is never estimated: every voxel on one ray receives the
//! same feature.
//!
//! Tensor layouts are dense and row-major:
//! - feature image: `[height][width][channels]`
//! - voxel grid: `[nx][ny][nz][channels]`
//! - BEV grid: `[nx][ny][channels]`

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{Camera, CameraRig};
use crate::error::{BevError, Result};

/// Regular voxel lattice in the ego frame. `origin` is the minimum corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Bin sizes `(dx, dy, dz)` in meters.
    pub voxel_size: [f64; 3],
    pub origin: [f64; 3],
}

impl Default for VoxelGridSpec {
    /// 400 x 400 x 12 bins of 0.25 m x 0.25 m x 0.5 m covering x, y in
    /// [-50, 50) m and z in [-3, 3) m.
    fn default() -> Self {
        Self {
            nx: 400,
            ny: 400,
            nz: 12,
            voxel_size: [0.25, 0.25, 0.5],
            origin: [-50.0, -50.0, -3.0],
        }
    }
}

impl VoxelGridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, voxel_size: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let spec = Self {
            nx,
            ny,
            nz,
            voxel_size,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid of the given counts centered on the ego origin in x and y, with the
    /// default bin sizes and z range start.
    pub fn centered(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let d = Self::default();
        let [dx, dy, _] = d.voxel_size;
        Self::new(
            nx,
            ny,
            nz,
            d.voxel_size,
            [-(nx as f64) * dx / 2.0, -(ny as f64) * dy / 2.0, d.origin[2]],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(BevError::InvalidArgument(format!(
                "voxel counts must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        if self.voxel_size.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(BevError::InvalidArgument(format!(
                "voxel sizes must be positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(BevError::InvalidArgument("voxel grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Center of voxel `(ix, iy, iz)` in meters.
    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let [dx, dy, dz] = self.voxel_size;
        let [ox, oy, oz] = self.origin;
        [
            ox + (ix as f64 + 0.5) * dx,
            oy + (iy as f64 + 0.5) * dy,
            oz + (iz as f64 + 0.5) * dz,
        ]
    }

    /// BEV cell containing the ground-plane point `(x, y)`, if inside the grid.
    pub fn bev_cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin[0]) / self.voxel_size[0]).floor();
        let fy = ((y - self.origin[1]) / self.voxel_size[1]).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Whether the ground-plane point lies inside the BEV extent.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        self.bev_cell_of(x, y).is_some()
    }

    /// Layer index whose center is nearest to height `z`, clamped to the grid.
    pub fn layer_nearest(&self, z: f64) -> usize {
        let k = ((z - self.origin[2]) / self.voxel_size[2] - 0.5).round();
        k.clamp(0.0, (self.nz - 1) as f64) as usize
    }
}

/// Per-camera dense feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub camera_index: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureImage {
    pub fn new(camera_index: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(BevError::ShapeMismatch(format!(
                "feature image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(BevError::InvalidArgument("feature image contains non-finite values".into()));
        }
        Ok(Self {
            camera_index,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(camera_index: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            camera_index,
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let o = (row * self.width + col) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Writes the feature at continuous coordinate `(u, v)` into `out`.
    /// Integer coordinates address pixel samples; `(u, v)` must lie in
    /// `[0, width) x [0, height)`.
    pub fn sample_into(&self, u: f64, v: f64, mode: Sampling, out: &mut [f32]) {
        match mode {
            Sampling::Nearest => {
                let col = (u.round() as usize).min(self.width - 1);
                let row = (v.round() as usize).min(self.height - 1);
                out.copy_from_slice(self.pixel(row, col));
            }
            Sampling::Bilinear => {
                let (u0, v0) = (u.floor(), v.floor());
                let (au, av) = ((u - u0) as f32, (v - v0) as f32);
                let c0 = u0 as usize;
                let r0 = v0 as usize;
                let c1 = (c0 + 1).min(self.width - 1);
                let r1 = (r0 + 1).min(self.height - 1);
                let (p00, p01, p10, p11) = (self.pixel(r0, c0), self.pixel(r0, c1), self.pixel(r1, c0), self.pixel(r1, c1));
                for c in 0..self.channels {
                    let top = p00[c] * (1.0 - au) + p01[c] * au;
                    let bottom = p10[c] * (1.0 - au) + p11[c] * au;
                    out[c] = top * (1.0 - av) + bottom * av;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    /// Mean over contributing views.
    #[default]
    Average,
    Sum,
    /// First contributing camera in rig order.
    First,
}

impl std::str::FromStr for Fusion {
    type Err = BevError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" | "mean" => Ok(Self::Average),
            "sum" => Ok(Self::Sum),
            "first" => Ok(Self::First),
            other => Err(BevError::InvalidArgument(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: VoxelGridSpec,
    pub channels: usize,
    pub data: Vec<f32>,
    /// Number of views that saw each voxel center.
    pub hit_count: Vec<u32>,
}

impl VoxelGrid {
    pub fn zeros(spec: VoxelGridSpec, channels: usize) -> Self {
        Self {
            spec,
            channels,
            data: vec![0.0; spec.num_voxels() * channels],
            hit_count: vec![0; spec.num_voxels()],
        }
    }

    #[inline]
    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.spec.ny + iy) * self.spec.nz + iz
    }

    #[inline]
    pub fn voxel(&self, ix: usize, iy: usize, iz: usize) -> &[f32] {
        let o = self.voxel_index(ix, iy, iz) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn hits(&self, ix: usize, iy: usize, iz: usize) -> u32 {
        self.hit_count[self.voxel_index(ix, iy, iz)]
    }

    /// Single height layer as a BEV grid.
    pub fn layer(&self, iz: usize) -> BevGrid {
        let mut out = BevGrid::zeros(self.spec.nx, self.spec.ny, self.channels);
        for ix in 0..self.spec.nx {
            for iy in 0..self.spec.ny {
                out.cell_mut(ix, iy).copy_from_slice(self.voxel(ix, iy, iz));
            }
        }
        out
    }
}

/// Top-down grid with an arbitrary channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl BevGrid {
    pub fn zeros(nx: usize, ny: usize, channels: usize) -> Self {
        Self {
            nx,
            ny,
            channels,
            data: vec![0.0; nx * ny * channels],
        }
    }

    pub fn from_data(nx: usize, ny: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != nx * ny * channels {
            return Err(BevError::ShapeMismatch(format!(
                "BEV grid {nx}x{ny}x{channels} needs {} values, got {}",
                nx * ny * channels,
                data.len()
            )));
        }
        Ok(Self { nx, ny, channels, data })
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, c: usize) -> f32 {
        self.data[(ix * self.ny + iy) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, c: usize, v: f32) {
        self.data[(ix * self.ny + iy) * self.channels + c] = v;
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &[f32] {
        let o = (ix * self.ny + iy) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn cell_mut(&mut self, ix: usize, iy: usize) -> &mut [f32] {
        let o = (ix * self.ny + iy) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Channel `c` as its own single-channel grid.
    pub fn channel(&self, c: usize) -> BevGrid {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        BevGrid {
            nx: self.nx,
            ny: self.ny,
            channels: 1,
            data,
        }
    }

    pub fn same_shape(&self, other: &BevGrid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.channels == other.channels
    }

    /// 2x2 average pooling; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&self) -> BevGrid {
        let (nx, ny) = (self.nx / 2, self.ny / 2);
        let mut out = BevGrid::zeros(nx, ny, self.channels);
        for ix in 0..nx {
            for iy in 0..ny {
                for c in 0..self.channels {
                    let s = self.get(2 * ix, 2 * iy, c)
                        + self.get(2 * ix + 1, 2 * iy, c)
                        + self.get(2 * ix, 2 * iy + 1, c)
                        + self.get(2 * ix + 1, 2 * iy + 1, c);
                    out.set(ix, iy, c, s / 4.0);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UnprojectOptions {
    pub fusion: Fusion,
    pub sampling: Sampling,
}

/// Fills a voxel grid from per-camera feature images.
///
/// Camera intrinsics are given at full image resolution and are rescaled to
/// each feature image's size before projecting. Voxels seen by no camera stay
/// zero. Each voxel accumulates cameras in rig order, so the result does not
/// depend on how work is split across threads.
pub fn unproject(
    rig: &CameraRig,
    features: &[FeatureImage],
    spec: &VoxelGridSpec,
    opts: UnprojectOptions,
) -> Result<VoxelGrid> {
    spec.validate()?;
    if features.len() != rig.len() {
        return Err(BevError::ShapeMismatch(format!(
            "{} feature images for a rig of {} cameras",
            features.len(),
            rig.len()
        )));
    }
    let channels = features[0].channels;
    for (i, f) in features.iter().enumerate() {
        if f.channels != channels {
            return Err(BevError::ShapeMismatch(format!(
                "feature image {i} has {} channels, expected {channels}",
                f.channels
            )));
        }
        if f.width == 0 || f.height == 0 || f.data.len() != f.width * f.height * f.channels {
            return Err(BevError::ShapeMismatch(format!("feature image {i} has an inconsistent shape")));
        }
    }
    let cams: Vec<Camera> = rig
        .cameras()
        .iter()
        .zip(features)
        .map(|(c, f)| c.at_resolution(f.width as u32, f.height as u32))
        .collect();

    let mut grid = VoxelGrid::zeros(*spec, channels);
    let column = spec.ny * spec.nz;
    grid.data
        .par_chunks_mut(column * channels)
        .zip(grid.hit_count.par_chunks_mut(column))
        .enumerate()
        .for_each(|(ix, (data, hits))| {
            let mut sample = vec![0.0f32; channels];
            for iy in 0..spec.ny {
                for iz in 0..spec.nz {
                    let local = iy * spec.nz + iz;
                    let center = Vector3::from(spec.cell_center(ix, iy, iz));
                    let out = &mut data[local * channels..(local + 1) * channels];
                    hits[local] = fuse_voxel(&cams, features, &center, opts, &mut sample, out);
                }
            }
        });
    Ok(grid)
}

#[inline]
fn fuse_voxel(
    cams: &[Camera],
    features: &[FeatureImage],
    center: &Vector3<f64>,
    opts: UnprojectOptions,
    sample: &mut [f32],
    out: &mut [f32],
) -> u32 {
    let mut hits = 0u32;
    for (cam, feat) in cams.iter().zip(features) {
        let Some(p) = cam.project(center) else {
            continue;
        };
        if opts.fusion == Fusion::First && hits > 0 {
            hits += 1;
            continue;
        }
        feat.sample_into(p.u, p.v, opts.sampling, sample);
        for (o, s) in out.iter_mut().zip(sample.iter()) {
            *o += *s;
        }
        hits += 1;
    }
    if opts.fusion == Fusion::Average && hits > 1 {
        let n = hits as f32;
        out.iter_mut().for_each(|o| *o /= n);
    }
    hits
}

/// Spatial-to-Channel: `[nx][ny][nz][C]` to `[nx][ny][nz * C]`, output
/// channel `k * C + c` holding voxel `(x, y, k, c)`. Pure re-layout.
pub fn spatial_to_channel(v: &VoxelGrid) -> BevGrid {
    BevGrid {
        nx: v.spec.nx,
        ny: v.spec.ny,
        channels: v.spec.nz * v.channels,
        data: v.data.clone(),
    }
}

/// Inverse of [`spatial_to_channel`]. `hit_count` is not carried by the BEV
/// grid and is restored from the nonzero pattern of `hits` when given.
pub fn channel_to_spatial(b: &BevGrid, spec: &VoxelGridSpec, hits: Option<&[u32]>) -> Result<VoxelGrid> {
    if b.nx != spec.nx || b.ny != spec.ny || b.channels % spec.nz != 0 {
        return Err(BevError::ShapeMismatch(format!(
            "BEV grid {}x{}x{} does not fold into {}x{}x{}",
            b.nx, b.ny, b.channels, spec.nx, spec.ny, spec.nz
        )));
    }
    let hit_count = match hits {
        Some(h) if h.len() == spec.num_voxels() => h.to_vec(),
        Some(_) => return Err(BevError::ShapeMismatch("hit count length".into())),
        None => vec![0; spec.num_voxels()],
    };
    Ok(VoxelGrid {
        spec: *spec,
        channels: b.channels / spec.nz,
        data: b.data.clone(),
        hit_count,
    })
}

/// Distance-aware loss weight over an `nx x ny` grid, in `[1, 2]`.
///
/// `1 + sqrt(d^2 / d_max^2)` where `d` is the grid distance to `center` and
/// `d_max` is the distance from `center` to the farthest grid corner.
pub fn bev_centerness(nx: usize, ny: usize, center: (f64, f64)) -> Result<BevGrid> {
    let (xc, yc) = center;
    if nx == 0 || ny == 0 {
        return Err(BevError::InvalidArgument("centerness grid must be non-empty".into()));
    }
    if !(0.0..=(nx - 1) as f64).contains(&xc) || !(0.0..=(ny - 1) as f64).contains(&yc) {
        return Err(BevError::InvalidArgument(format!(
            "center ({xc}, {yc}) outside {nx}x{ny} grid"
        )));
    }
    let max_dx = xc.max((nx - 1) as f64 - xc);
    let max_dy = yc.max((ny - 1) as f64 - yc);
    let denom = max_dx * max_dx + max_dy * max_dy;
    let mut out = BevGrid::zeros(nx, ny, 1);
    for ix in 0..nx {
        for iy in 0..ny {
            let (dx, dy) = (ix as f64 - xc, iy as f64 - yc);
            let v = if denom > 0.0 {
                1.0 + ((dx * dx + dy * dy) / denom).sqrt()
            } else {
                1.0
            };
            out.set(ix, iy, 0, v as f32);
        }
    }
    Ok(out)
}

/// Scalar form of [`bev_centerness`] in `f64`.
pub fn centerness_value(nx: usize, ny: usize, center: (f64, f64), at: (f64, f64)) -> f64 {
    let (xc, yc) = center;
    let max_dx = xc.max((nx - 1) as f64 - xc);
    let max_dy = yc.max((ny - 1) as f64 - yc);
    let denom = max_dx * max_dx + max_dy * max_dy;
    if denom <= 0.0 {
        return 1.0;
    }
    let (dx, dy) = (at.0 - xc, at.1 - yc);
    1.0 + ((dx * dx + dy * dy) / denom).sqrt()
}
