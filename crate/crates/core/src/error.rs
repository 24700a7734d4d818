use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum BevError {
    #[error("camera {index}: {reason}")]
    InvalidCamera { index: usize, reason: String },

    #[error("camera index {index} out of range for rig with {count} cameras")]
    CameraIndex { index: usize, count: usize },

    #[error("pixel ({u}, {v}) outside image bounds {width}x{height}")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = BevError> = std::result::Result<T, E>;
