//! Closed-form parameter and multiply-accumulate counts for a BEV encoder
//! built either from 3x3x3 convolutions over the voxel grid or from
//! Spatial-to-Channel followed by 3x3 2D convolutions.
//!
//! Convolutions use stride 1 and same padding; every output position is
//! charged a full kernel (padding taps included). Biases are not counted.

use crate::error::{BevError, Result};
use crate::voxel::VoxelGridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    Naive3d,
    S2c2d,
}

impl std::str::FromStr for EncoderMode {
    type Err = BevError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive3d" => Ok(Self::Naive3d),
            "s2c2d" => Ok(Self::S2c2d),
            other => Err(BevError::InvalidArgument(format!("unknown encoder mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderCost {
    pub params: u128,
    pub macs: u128,
}

/// Cost of `layers` stacked convolutions. The first layer reads `channels`
/// features per voxel (or `nz * channels` per BEV cell after S2C); every
/// layer writes `conv_channels`.
pub fn encoder_cost(
    spec: &VoxelGridSpec,
    channels: usize,
    layers: usize,
    mode: EncoderMode,
    conv_channels: usize,
) -> Result<EncoderCost> {
    if layers == 0 {
        return Err(BevError::InvalidArgument("encoder needs at least one layer".into()));
    }
    let (positions, kernel, first_in) = match mode {
        EncoderMode::Naive3d => (spec.nx * spec.ny * spec.nz, 27, channels),
        EncoderMode::S2c2d => (spec.nx * spec.ny, 9, spec.nz * channels),
    };
    let (positions, kernel, first_in, out) =
        (positions as u128, kernel as u128, first_in as u128, conv_channels as u128);
    let mut params = kernel * first_in * out;
    params += (layers as u128 - 1) * kernel * out * out;
    Ok(EncoderCost {
        params,
        macs: positions * params,
    })
}

/// Activation memory (elements) for lifting `h x w` image features of
/// `channels` channels to a categorical depth volume with `depth_bins` bins,
/// versus a voxel grid of the same channel width. Returns `(lifted, voxel)`.
pub fn lifting_memory(h: usize, w: usize, channels: usize, depth_bins: usize, spec: &VoxelGridSpec) -> (u128, u128) {
    let lifted = (h * w) as u128 * depth_bins as u128 * channels as u128;
    let voxel = spec.num_voxels() as u128 * channels as u128;
    (lifted, voxel)
}
