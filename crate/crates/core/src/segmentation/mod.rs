//! Reference-image over-segmentation into superpixels.

mod grid;
mod partition;
mod slic;

pub use grid::{grid_labels, grid_segment, grid_shape};
pub use partition::{Pixel, SuperpixelPartition};
pub use slic::{slic_segment, slic_segment_with, SlicOptions, DEFAULT_COMPACTNESS, SLIC_ITERATIONS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmentationError {
    #[error("cannot split {pixels} pixels into {requested} superpixels")]
    DegenerateRequest { requested: usize, pixels: usize },
    #[error("superpixel id {id} out of range (N = {count})")]
    IdOutOfRange { id: usize, count: usize },
    #[error("label map holds {actual} entries, expected {width}x{height}")]
    SizeMismatch {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("superpixel {0} has no pixels")]
    EmptySuperpixel(usize),
}
