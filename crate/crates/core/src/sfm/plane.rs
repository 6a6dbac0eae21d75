use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{Correspondence, SfmError};
use crate::camera::{backproject, Intrinsics};
use crate::io::DenseFlow;
use crate::segmentation::Pixel;

/// `X' = R X + lambda * t_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub t_hat: Vector3<f64>,
    pub lambda: f64,
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            t_hat: Vector3::z(),
            lambda: 0.0,
        }
    }

    #[inline]
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.t_hat * self.lambda
    }
}

/// A superpixel's plane `n^T X = lambda * d` and its lifted anchor and boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanePatch {
    pub normal: Vector3<f64>,
    pub d: f64,
    pub lambda: f64,
    pub anchor3d: Vector3<f64>,
    pub boundary3d: Vec<Vector3<f64>>,
}

impl PlanePatch {
    /// Lifts the anchor and boundary pixels onto the plane.
    pub fn instantiate(
        normal: Vector3<f64>,
        d: f64,
        lambda: f64,
        anchor: Pixel,
        boundary: &[Pixel],
        k: &Intrinsics,
    ) -> Result<Self, SfmError> {
        let lift = |p: &Pixel| backproject(p.coords(), &normal, d, lambda, k);
        Ok(Self {
            normal,
            d,
            lambda,
            anchor3d: lift(&anchor)?,
            boundary3d: boundary.iter().map(lift).collect::<Result<_, _>>()?,
        })
    }

    /// Plane offset `lambda * d`.
    #[inline]
    pub fn offset(&self) -> f64 {
        self.lambda * self.d
    }
}

/// Second-frame geometry of a patch: points `R X + lambda t_hat`, normal `R n`.
pub fn transform_patch(patch: &PlanePatch, m: &RigidMotion) -> PlanePatch {
    let normal = m.rotation * patch.normal;
    let shift = m.t_hat * m.lambda;
    // n'^T X' = lambda d + n'^T lambda t_hat
    let offset = patch.offset() + normal.dot(&shift);
    let d = if patch.lambda != 0.0 {
        offset / patch.lambda
    } else {
        patch.d
    };
    PlanePatch {
        normal,
        d,
        lambda: patch.lambda,
        anchor3d: m.apply(&patch.anchor3d),
        boundary3d: patch.boundary3d.iter().map(|x| m.apply(x)).collect(),
    }
}

/// Pixel homography `K (R + t_hat n^T / d) K^-1` induced by the plane
/// `n^T X = lambda d` under `X' = R X + lambda t_hat`; independent of lambda.
pub fn plane_homography(
    rotation: &Matrix3<f64>,
    t_hat: &Vector3<f64>,
    normal: &Vector3<f64>,
    d: f64,
    k: &Intrinsics,
) -> Matrix3<f64> {
    k.matrix() * (rotation + t_hat * normal.transpose() / d) * k.inverse_matrix()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalDepth {
    pub normal: Vector3<f64>,
    pub d: f64,
    /// Relative Frobenius misfit of `K^-1 H K` against `s (R + t_hat m^T)`.
    pub residual: f64,
}

/// Plane of a superpixel from its homography and a known motion.
///
/// Solves `K^-1 H K = s R + t_hat q^T` in least squares, then `m = q / s`,
/// `n = m / |m|`, `d = 1 / |m|`. `anchor` must backproject in front of the camera.
pub fn recover_normal_depth(
    h: &Matrix3<f64>,
    rotation: &Matrix3<f64>,
    t_hat: &Vector3<f64>,
    k: &Intrinsics,
    anchor: (f64, f64),
) -> Result<NormalDepth, SfmError> {
    let g = k.inverse_matrix() * h * k.matrix();
    let gn = g.norm();
    if !(gn > 0.0) {
        return Err(SfmError::NumericallySingular);
    }
    let g = g / gn;
    let mut a = SMatrix::<f64, 9, 4>::zeros();
    let mut b = SVector::<f64, 9>::zeros();
    for r in 0..3 {
        for c in 0..3 {
            let row = 3 * r + c;
            a[(row, 0)] = rotation[(r, c)];
            a[(row, 1 + c)] = t_hat[r];
            b[row] = g[(r, c)];
        }
    }
    let x = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|_| SfmError::NumericallySingular)?;
    let s = x[0];
    let q = Vector3::new(x[1], x[2], x[3]);
    if s.abs() < 1e-12 {
        return Err(SfmError::NumericallySingular);
    }
    let m = q / s;
    let mn = m.norm();
    if mn < 1e-9 {
        return Err(SfmError::NumericallySingular);
    }
    let normal = m / mn;
    let residual = (a * x - b).norm();
    if normal.dot(&k.ray(anchor.0, anchor.1)) <= 0.0 {
        return Err(SfmError::InconsistentOrientation);
    }
    Ok(NormalDepth {
        normal,
        d: 1.0 / mn,
        residual,
    })
}

/// Up to `max` valid flow correspondences spread over the pixel set: the
/// bounding box is split into cells and the pixel nearest each cell centre kept.
pub fn sample_correspondences(
    pixels: &[Pixel],
    flow: &DenseFlow,
    max: usize,
) -> Vec<Correspondence> {
    let valid: Vec<(Pixel, (f64, f64))> = pixels
        .iter()
        .filter_map(|p| flow.at(p.x, p.y).map(|f| (*p, f)))
        .collect();
    let to_corr = |(p, (u, v)): &(Pixel, (f64, f64))| {
        let (x, y) = p.coords();
        Correspondence::new(nalgebra::Point2::new(x, y), nalgebra::Point2::new(x + u, y + v))
    };
    if valid.len() <= max {
        return valid.iter().map(to_corr).collect();
    }
    let (x0, x1) = valid.iter().fold((usize::MAX, 0), |(a, b), (p, _)| (a.min(p.x), b.max(p.x)));
    let (y0, y1) = valid.iter().fold((usize::MAX, 0), |(a, b), (p, _)| (a.min(p.y), b.max(p.y)));
    let (w, h) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
    let pick = |cell: f64| -> Vec<usize> {
        let cols = (w / cell).ceil().max(1.0) as usize;
        let rows = (h / cell).ceil().max(1.0) as usize;
        let mut best: Vec<Option<(f64, usize)>> = vec![None; cols * rows];
        for (i, (p, _)) in valid.iter().enumerate() {
            let cx = ((((p.x - x0) as f64) / cell) as usize).min(cols - 1);
            let cy = ((((p.y - y0) as f64) / cell) as usize).min(rows - 1);
            let centre = (
                x0 as f64 + (cx as f64 + 0.5) * cell,
                y0 as f64 + (cy as f64 + 0.5) * cell,
            );
            let dist = (p.x as f64 - centre.0).powi(2) + (p.y as f64 - centre.1).powi(2);
            let slot = &mut best[cy * cols + cx];
            if slot.is_none_or(|(d, _)| dist < d) {
                *slot = Some((dist, i));
            }
        }
        let mut picked: Vec<usize> = best.iter().flatten().map(|&(_, i)| i).collect();
        picked.sort_unstable();
        picked
    };
    // largest occupancy not exceeding `max`
    let mut cell = (w * h / max as f64).sqrt().max(1.0);
    let mut picked = pick(cell);
    while picked.len() > max {
        cell *= 1.1;
        picked = pick(cell);
    }
    loop {
        let finer = pick(cell * 0.95);
        if finer.len() > max || cell < 1.0 {
            break;
        }
        cell *= 0.95;
        picked = finer;
    }
    picked.iter().map(|&i| to_corr(&valid[i])).collect()
}
