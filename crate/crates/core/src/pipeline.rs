//! End-to-end reconstruction: segmentation, per-superpixel initialization,
//! scale recovery and refinement, and depth rendering.

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::config::{ConfigError, RunConfig, SegmentationMethod};
use crate::energy::{energy_breakdown, EnergyBreakdown};
use crate::graph::SceneGraph;
use crate::init::{initialize, InitError, InitSource, Initialization};
use crate::io::{DenseFlow, DepthMap, ImageRGB};
use crate::optimize::{solve, OptimizeError, SolverTrace};
use crate::render::{depth_frame1, depth_frame2, MovingPlane};
use crate::segmentation::{grid_segment, slic_segment, SegmentationError, SuperpixelPartition};
use crate::state::{Problem, SceneState};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{what} is {got_w}x{got_h}, expected {width}x{height}")]
    DimensionMismatch {
        what: &'static str,
        width: usize,
        height: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

impl PipelineError {
    /// Bad input or configuration, as opposed to a failure of the solver.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Self::DimensionMismatch { .. } | Self::Config(_) | Self::Segmentation(_))
    }
}

/// Per-superpixel summary written next to the depth maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub lambda: Vec<f64>,
    pub sources: Vec<InitSource>,
    pub energy: EnergyBreakdown,
    pub rounds: usize,
    pub accepted_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub problem: Problem,
    pub init: Initialization,
    pub state: SceneState,
    pub breakdown: EnergyBreakdown,
    pub trace: SolverTrace,
    pub rounds: usize,
    pub accepted_rounds: usize,
    pub depth1: DepthMap,
    pub depth2: DepthMap,
}

impl Reconstruction {
    pub fn report(&self) -> ScaleReport {
        ScaleReport {
            lambda: self.state.lambda.clone(),
            sources: self.init.sources.clone(),
            energy: self.breakdown,
            rounds: self.rounds,
            accepted_rounds: self.accepted_rounds,
        }
    }
}

fn check_dims(what: &'static str, k: &Intrinsics, w: usize, h: usize) -> Result<(), PipelineError> {
    if (w, h) != (k.width, k.height) {
        return Err(PipelineError::DimensionMismatch {
            what,
            width: k.width,
            height: k.height,
            got_w: w,
            got_h: h,
        });
    }
    Ok(())
}

/// Over-segments the reference image, or adopts a given label map.
pub fn segment(
    img: &ImageRGB,
    labels: Option<&[u32]>,
    cfg: &RunConfig,
) -> Result<SuperpixelPartition, SegmentationError> {
    if let Some(l) = labels {
        return SuperpixelPartition::from_raw_labels(img.width, img.height, l);
    }
    let s = &cfg.segmentation;
    match s.method {
        SegmentationMethod::Grid => grid_segment(img.width, img.height, s.superpixels),
        SegmentationMethod::Slic => slic_segment(img, s.superpixels, s.compactness),
    }
}

/// Builds the fixed problem data for a segmentation.
pub fn build_problem(
    img: &ImageRGB,
    flow: &DenseFlow,
    k: &Intrinsics,
    partition: SuperpixelPartition,
    cfg: &RunConfig,
) -> Problem {
    let e = &cfg.energy;
    let graph = SceneGraph::build(&partition, img, e.k, e.beta_spatial, e.beta_color);
    Problem::new(*k, partition, graph, flow)
}

/// Reconstructs both frames' depth from a reference image and its forward flow.
pub fn reconstruct(
    img: &ImageRGB,
    flow: &DenseFlow,
    k: &Intrinsics,
    labels: Option<&[u32]>,
    cfg: &RunConfig,
) -> Result<Reconstruction, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    check_dims("reference image", k, img.width, img.height)?;
    check_dims("flow", k, flow.width, flow.height)?;
    if let Some(l) = labels {
        if l.len() != k.width * k.height {
            return Err(SegmentationError::SizeMismatch {
                width: k.width,
                height: k.height,
                actual: l.len(),
            }
            .into());
        }
    }
    let partition = segment(img, labels, &cfg)?;
    let problem = build_problem(img, flow, k, partition, &cfg);
    log::info!(
        "{} superpixels, {} knn edges, {} adjacency edges",
        problem.len(),
        problem.graph.knn.edges.len(),
        problem.graph.adjacency.len()
    );
    let init = initialize(&problem, flow, &cfg.init, cfg.seed)?;
    let fallback = init.sources.iter().filter(|s| **s == InitSource::Neighbor).count();
    if fallback > 0 {
        log::info!("{fallback} superpixels initialized from neighbours");
    }
    let out = solve(&problem, init.hypotheses.clone(), &cfg.energy, &cfg.solver)?;
    let planes: Vec<MovingPlane> = out
        .state
        .hypotheses
        .iter()
        .zip(&out.state.lambda)
        .map(|(h, &l)| MovingPlane::from_hypothesis(h, l))
        .collect();
    let labels = &problem.partition.labels;
    let depth1 = depth_frame1(k, labels, &planes);
    let (depth2, _) = depth_frame2(k, labels, &planes);
    let breakdown = energy_breakdown(&problem, &out.state, &cfg.energy);
    Ok(Reconstruction {
        problem,
        init,
        state: out.state,
        breakdown,
        trace: out.trace,
        rounds: out.rounds,
        accepted_rounds: out.accepted_rounds,
        depth1,
        depth2,
    })
}
