//! Raster types and their on-disk containers.
//!
//! * dense flow: Middlebury `.flo`
//! * depth: grayscale little-endian PFM, invalid pixels stored as `0`
//! * intrinsics: JSON object `{fx, fy, cx, cy, width, height}`
//! * color images: 8-bit PNG/PPM normalized to `[0, 1]`
//! * label maps: 16-bit grayscale PNG of superpixel ids
//!
//! Every format has a byte-level `decode_*`/`encode_*` pair plus path-based
//! wrappers. The decoders are the fuzzing entry points.

mod flo;
mod intrinsics;
mod pfm;
mod raster;

use std::path::{Path, PathBuf};

pub use flo::{decode_flo, encode_flo, load_flow, load_flow_with_cap, save_flow, FLO_MAGIC, MAX_FLOW_PIXELS};
pub use intrinsics::{encode_intrinsics, load_intrinsics, parse_intrinsics, save_intrinsics};
pub use pfm::{decode_pfm, encode_pfm, load_depth_pfm, save_depth_pfm};
pub use raster::{
    decode_image_rgb, decode_label_png, encode_label_png, load_image_rgb, load_label_png,
    save_image_rgb, save_label_png, DenseFlow, DepthMap, ImageRGB,
};

use crate::camera::IntrinsicsError;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("{width}x{height} exceeds the configured cap of {cap} pixels")]
    DimensionOverflow {
        width: u64,
        height: u64,
        cap: usize,
    },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` is not a valid {expected}")]
    InvalidField {
        field: &'static str,
        expected: &'static str,
    },
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error(transparent)]
    Intrinsics(IntrinsicsError),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),
    #[error("buffer length {actual} does not match {width}x{height}")]
    LengthMismatch {
        width: usize,
        height: usize,
        actual: usize,
    },
}

impl From<IntrinsicsError> for IoError {
    fn from(e: IntrinsicsError) -> Self {
        match e {
            IntrinsicsError::NonPositiveFocal { fx, fy } => IoError::NonPositiveFocal { fx, fy },
            other => IoError::Intrinsics(other),
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read_bytes(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
