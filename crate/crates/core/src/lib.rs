//! Multi-camera bird's-eye-view geometry: camera rigs, uniform-depth
//! unprojection into voxel grids, Spatial-to-Channel flattening, rotated BEV
//! boxes, anchor assignment, losses with analytic gradients, synthetic scenes
//! and evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assign;
pub mod boxes;
pub mod camera;
pub mod checks;
pub mod cost;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod scene;
pub mod voxel;

pub use assign::{
    assign_dynamic, assign_fixed_iou, AnchorLabel, AnchorPrediction, AssignmentResult, DynamicConfig,
};
pub use boxes::{bev_iou, generate_anchors, rotated_nms, rotated_nms_indices, AnchorSpec, Box3D, NmsConfig};
pub use camera::{Camera, CameraRig, Extrinsics, Intrinsics, PixelRay, PixelRect, Projection};
pub use cost::{encoder_cost, EncoderCost, EncoderMode};
pub use error::{BevError, Result};
pub use loss::{LossReport, LossWeights};
pub use metrics::{center_distance_ap, seg_iou, EvalResult};
pub use pipeline::{noise_sweep, run_scene, PipelineConfig, SweepRow};
pub use scene::{generate_scene, perturb_extrinsics, NoiseSpec, SceneConfig, SyntheticScene};
pub use voxel::{
    bev_centerness, channel_to_spatial, spatial_to_channel, unproject, BevGrid, FeatureImage, Fusion, Sampling,
    UnprojectOptions, VoxelGrid, VoxelGridSpec,
};
