//! Two-view dense reconstruction of dynamic scenes.
//!
//! The reference image is over-segmented into superpixels, each modelled as a
//! rigidly moving 3D plane. Every superpixel is reconstructed independently up
//! to its own unknown scale; an as-rigid-as-possible energy over a K-NN graph
//! of superpixel anchors (plus reprojection, boundary-continuity, and
//! orientation terms) then recovers the relative scales, so the depth maps of
//! both frames are consistent up to one global scale.

pub mod camera;
pub mod config;
pub mod energy;
pub mod evaluate;
pub mod graph;
pub mod init;
pub mod io;
pub mod optimize;
pub mod pipeline;
pub mod render;
pub mod segmentation;
pub mod sfm;
pub mod state;
pub mod synth;
