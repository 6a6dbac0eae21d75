//! Per-superpixel two-view geometry: homographies, essential-matrix motion,
//! and plane recovery.

mod essential;
mod homography;
mod plane;

use nalgebra::{Matrix3, Point2};

pub use essential::{
    cheirality_count, decompose_essential, enforce_essential, estimate_motion,
    estimate_motion_with, fit_rotation, fundamental_from_essential, sampson_distance, skew,
    triangulate, MotionEstimate, MotionOptions,
};
pub use homography::{
    decompose_homography, fit_homography, fit_homography_ransac, Homography,
    HomographyDecomposition, RansacOptions, RobustHomography,
};
pub use plane::{
    plane_homography, recover_normal_depth, sample_correspondences, transform_patch,
    NormalDepth, PlanePatch, RigidMotion,
};

/// A reference pixel and where the flow moves it in the next image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p: Point2<f64>,
    pub q: Point2<f64>,
}

impl Correspondence {
    pub fn new(p: Point2<f64>, q: Point2<f64>) -> Self {
        Self { p, q }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SfmError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("{found} usable correspondences, at least {needed} required")]
    InsufficientCorrespondences { found: usize, needed: usize },
    /// The flow is explained by a rotation alone; the translation is unobservable.
    #[error("insufficient parallax to recover a translation direction")]
    InsufficientParallax { rotation: Matrix3<f64> },
    /// Every correspondence (even after augmentation) lies on one plane.
    #[error("correspondences are explained by a single homography")]
    PlanarDegenerate,
    #[error("homography carries no translation component")]
    NumericallySingular,
    #[error("motion places the plane behind the camera")]
    InconsistentOrientation,
    #[error(transparent)]
    RayParallelToPlane(#[from] crate::camera::RayParallelToPlane),
}
