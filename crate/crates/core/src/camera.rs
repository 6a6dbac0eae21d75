//! Pinhole camera model shared by both frames.

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

/// Pinhole calibration of both views, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Violations of the [`Intrinsics`] invariants.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntrinsicsError {
    #[error("focal lengths must be positive and finite (fx={fx}, fy={fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) lies outside the {width}x{height} image")]
    PrincipalPointOutside {
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    },
    #[error("image dimensions must be non-zero")]
    EmptyImage,
}

/// Plane-ray intersection failed because the ray is (nearly) parallel to the plane.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("viewing ray is parallel to the plane (n.r = {denominator:e})")]
pub struct RayParallelToPlane {
    pub denominator: f64,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, IntrinsicsError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), IntrinsicsError> {
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(IntrinsicsError::NonPositiveFocal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(IntrinsicsError::EmptyImage);
        }
        let inside = |c: f64, size: usize| c.is_finite() && c >= 0.0 && c < size as f64;
        if !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(IntrinsicsError::PrincipalPointOutside {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Viewing ray `K^-1 (u, v, 1)` with unit Z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Perspective projection of a camera-frame point to pixel coordinates.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Point2<f64> {
        Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Lift pixel `(u, v)` onto the plane `n^T X = lambda * d`.
///
/// The point lies along the pixel's viewing ray, so it reprojects to `(u, v)`.
pub fn backproject(
    pixel: (f64, f64),
    normal: &Vector3<f64>,
    d: f64,
    lambda: f64,
    k: &Intrinsics,
) -> Result<Vector3<f64>, RayParallelToPlane> {
    let ray = k.ray(pixel.0, pixel.1);
    lift_ray(&ray, normal, lambda * d)
}

/// Intersect `ray` with the plane `n^T X = offset`.
#[inline]
pub fn lift_ray(
    ray: &Vector3<f64>,
    normal: &Vector3<f64>,
    offset: f64,
) -> Result<Vector3<f64>, RayParallelToPlane> {
    let denominator = normal.dot(ray);
    if denominator.abs() < 1e-12 {
        return Err(RayParallelToPlane { denominator });
    }
    Ok(ray * (offset / denominator))
}
