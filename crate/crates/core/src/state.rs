//! Problem data shared by the energy and the solvers, and the per-superpixel
//! variables they act on.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::graph::SceneGraph;
use crate::io::DenseFlow;
use crate::segmentation::SuperpixelPartition;
use crate::sfm::{plane_homography, Correspondence, PlanePatch, RigidMotion, SfmError};

/// Plane `n^T X = lambda * d` at unit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub d: f64,
}

impl Plane {
    pub fn fronto_parallel(d: f64) -> Self {
        Self {
            normal: Vector3::z(),
            d,
        }
    }

    /// Unit-scale lifting of `ray`; `None` unless it lands strictly in front.
    #[inline]
    pub fn lift(&self, ray: &Vector3<f64>) -> Option<Vector3<f64>> {
        let den = self.normal.dot(ray);
        if den <= 1e-12 || !(self.d > 0.0) {
            return None;
        }
        Some(ray * (self.d / den))
    }
}

/// Rotation and unit translation direction; the magnitude lives in `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub rotation: Matrix3<f64>,
    pub t_hat: Vector3<f64>,
}

impl Motion {
    #[inline]
    pub fn with_scale(&self, lambda: f64) -> RigidMotion {
        RigidMotion {
            rotation: self.rotation,
            t_hat: self.t_hat,
            lambda,
        }
    }
}

/// Plane and motion of one superpixel: the label space of the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub plane: Plane,
    pub motion: Motion,
}

impl Hypothesis {
    pub fn homography(&self, k: &Intrinsics) -> Matrix3<f64> {
        plane_homography(
            &self.motion.rotation,
            &self.motion.t_hat,
            &self.plane.normal,
            self.plane.d,
            k,
        )
    }
}

/// Everything fixed during optimization.
#[derive(Debug, Clone)]
pub struct Problem {
    pub intrinsics: Intrinsics,
    pub partition: SuperpixelPartition,
    pub graph: SceneGraph,
    /// Viewing ray of each anchor.
    pub anchor_rays: Vec<Vector3<f64>>,
    /// Valid flow correspondences of each superpixel.
    pub observations: Vec<Vec<Correspondence>>,
    /// Viewing rays of each adjacency edge's boundary pixels.
    pub edge_rays: Vec<Vec<Vector3<f64>>>,
}

impl Problem {
    pub fn new(
        intrinsics: Intrinsics,
        partition: SuperpixelPartition,
        graph: SceneGraph,
        flow: &DenseFlow,
    ) -> Self {
        let k = intrinsics;
        let anchor_rays = partition
            .anchors
            .iter()
            .map(|a| k.ray(a.x as f64, a.y as f64))
            .collect();
        let observations = partition
            .interiors
            .iter()
            .map(|px| {
                px.iter()
                    .filter_map(|p| {
                        let (u, v) = flow.at(p.x, p.y)?;
                        let (x, y) = p.coords();
                        Some(Correspondence::new(
                            nalgebra::Point2::new(x, y),
                            nalgebra::Point2::new(x + u, y + v),
                        ))
                    })
                    .collect()
            })
            .collect();
        let edge_rays = graph
            .adjacency
            .iter()
            .map(|e| e.pixels.iter().map(|p| k.ray(p.x as f64, p.y as f64)).collect())
            .collect();
        Self {
            intrinsics,
            partition,
            graph,
            anchor_rays,
            observations,
            edge_rays,
        }
    }

    pub fn len(&self) -> usize {
        self.partition.count
    }

    pub fn is_empty(&self) -> bool {
        self.partition.count == 0
    }

    /// Superpixels without a single valid flow vector.
    pub fn unobserved(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.observations[i].is_empty())
            .collect()
    }
}

/// The unknowns: one hypothesis and one scale per superpixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub hypotheses: Vec<Hypothesis>,
    pub lambda: Vec<f64>,
}

impl SceneState {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Lifted anchor and boundary geometry of superpixel `i` at its current scale.
    pub fn patch(&self, problem: &Problem, i: usize) -> Result<PlanePatch, SfmError> {
        let h = &self.hypotheses[i];
        PlanePatch::instantiate(
            h.plane.normal,
            h.plane.d,
            self.lambda[i],
            problem.partition.anchors[i],
            &problem.partition.boundaries[i],
            &problem.intrinsics,
        )
    }

    pub fn rigid_motion(&self, i: usize) -> RigidMotion {
        self.hypotheses[i].motion.with_scale(self.lambda[i])
    }
}
