//! Per-pixel depth of a piecewise-planar scene in both frames.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::Intrinsics;
use crate::io::DepthMap;
use crate::state::Hypothesis;

/// One plane `n^T X = distance` moving by `X' = R X + t`, in scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingPlane {
    pub normal: Vector3<f64>,
    pub distance: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl MovingPlane {
    pub fn from_hypothesis(h: &Hypothesis, lambda: f64) -> Self {
        Self {
            normal: h.plane.normal,
            distance: lambda * h.plane.d,
            rotation: h.motion.rotation,
            translation: h.motion.t_hat * lambda,
        }
    }

    /// Frame-1 point seen along `ray`, if in front of the camera.
    #[inline]
    pub fn lift(&self, ray: &Vector3<f64>) -> Option<Vector3<f64>> {
        let den = self.normal.dot(ray);
        if den <= 1e-12 {
            return None;
        }
        let x = ray * (self.distance / den);
        (x.z > 0.0).then_some(x)
    }

    /// The same plane expressed in the second camera frame.
    pub fn moved(&self) -> (Vector3<f64>, f64) {
        let n2 = self.rotation * self.normal;
        (n2, self.distance + n2.dot(&self.translation))
    }
}

/// Frame-1 depth: every pixel takes the plane of its superpixel.
pub fn depth_frame1(k: &Intrinsics, labels: &[u32], planes: &[MovingPlane]) -> DepthMap {
    let (w, h) = (k.width, k.height);
    let mut out = DepthMap::invalid(w, h);
    let z: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = k.ray((i % w) as f64, (i / w) as f64);
            planes[labels[i] as usize].lift(&ray).map_or(f64::NAN, |x| x.z)
        })
        .collect();
    for (i, z) in z.into_iter().enumerate() {
        out.set(i, z);
    }
    out
}

/// Frame-2 depth by inverse warping: a frame-2 pixel sees superpixel `i` if
/// its back-projection through `i`'s moved plane lands (to the nearest pixel)
/// inside `i` in frame 1; the nearest such surface wins. Returns the winning
/// superpixel per pixel alongside the depth.
pub fn depth_frame2(k: &Intrinsics, labels: &[u32], planes: &[MovingPlane]) -> (DepthMap, Vec<Option<u32>>) {
    let (w, h) = (k.width, k.height);
    let moved: Vec<(Vector3<f64>, f64)> = planes.iter().map(MovingPlane::moved).collect();
    let hits: Vec<Option<(f64, u32)>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = k.ray((i % w) as f64, (i / w) as f64);
            let mut best: Option<(f64, u32)> = None;
            for (id, (p, &(n2, d2))) in planes.iter().zip(&moved).enumerate() {
                let den = n2.dot(&ray);
                if den <= 1e-12 || d2 <= 0.0 {
                    continue;
                }
                let x2 = ray * (d2 / den);
                let x1 = p.rotation.transpose() * (x2 - p.translation);
                if x1.z <= 0.0 {
                    continue;
                }
                let q = k.project(&x1);
                let (qx, qy) = (q.x.round(), q.y.round());
                if qx < 0.0 || qy < 0.0 || qx >= w as f64 || qy >= h as f64 {
                    continue;
                }
                if labels[qy as usize * w + qx as usize] as usize != id {
                    continue;
                }
                if best.is_none_or(|(z, _)| x2.z < z) {
                    best = Some((x2.z, id as u32));
                }
            }
            best
        })
        .collect();
    let mut out = DepthMap::invalid(w, h);
    let mut owner = vec![None; w * h];
    for (i, hit) in hits.into_iter().enumerate() {
        if let Some((z, id)) = hit {
            out.set(i, z);
            owner[i] = Some(id);
        }
    }
    (out, owner)
}
