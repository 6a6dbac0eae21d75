//! Per-superpixel plane and motion hypotheses from the flow.
//!
//! Each superpixel's correspondences are fitted with a homography whose
//! decomposition yields (usually) two physically valid readings. Which one
//! is real cannot be told locally, so the choice is made jointly: true
//! planes of neighbouring superpixels meet along their shared boundary and
//! neighbouring motions tend to agree. An essential-matrix estimate over the
//! superpixel and its neighbours, when available, adds a weak preference.
//! Superpixels without a usable homography borrow a neighbour's motion and a
//! fronto-parallel plane.

use nalgebra::Vector3;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::DenseFlow;
use crate::optimize::PairwiseMrf;
use crate::sfm::{
    decompose_homography, estimate_motion_with, fit_homography_ransac, sample_correspondences, Correspondence,
    MotionOptions,
};
use crate::state::{Hypothesis, Motion, Plane, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Correspondences drawn per superpixel.
    pub samples: usize,
    /// Correspondences drawn per neighbour for the essential-matrix estimate.
    pub neighbor_samples: usize,
    pub motion: MotionOptions,
    /// Weight pulling the motion choice towards the essential-matrix estimate.
    pub essential_prior: f64,
    /// Tie-break towards planes facing the camera.
    pub fronto_prior: f64,
    /// Weight of motion agreement between K-NN neighbours, relative to the
    /// boundary fit of adjacent planes.
    pub motion_smoothness: f64,
    /// Largest joint label space solved by enumeration instead of message passing.
    pub exact_states: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            samples: 300,
            neighbor_samples: 60,
            motion: MotionOptions::default(),
            essential_prior: 0.1,
            fronto_prior: 1e-3,
            motion_smoothness: 0.01,
            exact_states: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    /// Chosen among the superpixel's own homography decompositions.
    Homography,
    /// Too little parallax or flow; copied from neighbours.
    Neighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Initialization {
    pub hypotheses: Vec<Hypothesis>,
    pub sources: Vec<InitSource>,
    /// Number of valid readings each superpixel started with.
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InitError {
    #[error("no superpixel has enough parallax to fix a motion")]
    NoParallax,
}

struct NodeCandidates {
    options: Vec<Hypothesis>,
    prior: Option<Motion>,
}

fn valid_hypothesis(h: &Hypothesis, anchor_ray: &Vector3<f64>) -> bool {
    h.plane.d.is_finite()
        && h.plane.d > 0.0
        && h.plane
            .lift(anchor_ray)
            .is_some_and(|p| (h.motion.rotation * p + h.motion.t_hat).z > 0.0)
}

fn node_candidates(problem: &Problem, flow: &DenseFlow, cfg: &InitConfig, seed: u64, i: usize) -> NodeCandidates {
    let k = &problem.intrinsics;
    let part = &problem.partition;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let corrs = sample_correspondences(&part.interiors[i], flow, cfg.samples);
    let mut options = Vec::new();
    if corrs.len() >= 4 {
        if let Ok(fit) = fit_homography_ransac(&corrs, &cfg.motion.ransac, &mut rng) {
            let g = k.inverse_matrix() * fit.homography.h * k.matrix();
            let rays: Vec<Vector3<f64>> = corrs
                .iter()
                .zip(&fit.inliers)
                .filter(|(_, &m)| m)
                .map(|(c, _)| k.ray(c.p.x, c.p.y))
                .collect();
            if let Ok(sols) = decompose_homography(&g, &rays) {
                for s in sols {
                    let h = Hypothesis {
                        plane: Plane {
                            normal: s.normal,
                            d: s.d,
                        },
                        motion: Motion {
                            rotation: s.rotation,
                            t_hat: s.t_hat,
                        },
                    };
                    if valid_hypothesis(&h, &problem.anchor_rays[i]) {
                        options.push(h);
                    }
                }
            }
        }
    }
    let prior = if options.len() > 1 && cfg.essential_prior > 0.0 {
        let neighbours: Vec<Correspondence> = part
            .adjacent(i)
            .into_iter()
            .flat_map(|j| sample_correspondences(&part.interiors[j], flow, cfg.neighbor_samples))
            .collect();
        let opts = MotionOptions {
            seed: seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            ..cfg.motion
        };
        estimate_motion_with(&corrs, k, &neighbours, &opts)
            .ok()
            .filter(|m| m.positive_depth_fraction >= 0.95)
            .map(|m| Motion {
                rotation: m.rotation,
                t_hat: m.t_hat,
            })
    } else {
        None
    };
    NodeCandidates { options, prior }
}

/// Zero when the two planes' liftings of the boundary rays are proportional,
/// i.e. the planes meet along the boundary for some relative scale.
pub fn boundary_misfit(rays: &[Vector3<f64>], a: &Plane, b: &Plane) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for r in rays {
        if let (Some(x), Some(y)) = (a.lift(r), b.lift(r)) {
            ab += x.dot(&y);
            aa += x.norm_squared();
            bb += y.norm_squared();
        }
    }
    if aa == 0.0 || bb == 0.0 {
        return 1.0;
    }
    (1.0 - ab * ab / (aa * bb)).max(0.0).sqrt()
}

fn motion_gap(a: &Motion, b: &Motion) -> f64 {
    (a.rotation - b.rotation).norm() + (a.t_hat - b.t_hat).norm()
}

pub fn initialize(problem: &Problem, flow: &DenseFlow, cfg: &InitConfig, seed: u64) -> Result<Initialization, InitError> {
    let n = problem.len();
    let nodes: Vec<NodeCandidates> = (0..n)
        .into_par_iter()
        .map(|i| node_candidates(problem, flow, cfg, seed, i))
        .collect();
    let candidates: Vec<usize> = nodes.iter().map(|c| c.options.len()).collect();
    let active: Vec<usize> = (0..n).filter(|&i| !nodes[i].options.is_empty()).collect();
    if active.is_empty() {
        return Err(InitError::NoParallax);
    }
    // MRF over the superpixels that have readings
    let mut slot = vec![usize::MAX; n];
    for (s, &i) in active.iter().enumerate() {
        slot[i] = s;
    }
    let unary: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| {
            nodes[i]
                .options
                .iter()
                .map(|h| {
                    let mut u = cfg.fronto_prior * (1.0 - h.plane.normal.z);
                    if let Some(m) = &nodes[i].prior {
                        u += cfg.essential_prior * motion_gap(&h.motion, m);
                    }
                    u
                })
                .collect()
        })
        .collect();
    let mut mrf = PairwiseMrf::new(unary);
    let table = |a: usize, b: usize, f: &dyn Fn(&Hypothesis, &Hypothesis) -> f64| -> Vec<f64> {
        let mut t = Vec::with_capacity(nodes[a].options.len() * nodes[b].options.len());
        for ha in &nodes[a].options {
            for hb in &nodes[b].options {
                t.push(f(ha, hb));
            }
        }
        t
    };
    let adj: Vec<(usize, usize, Vec<f64>)> = problem
        .graph
        .adjacency
        .par_iter()
        .zip(&problem.edge_rays)
        .filter(|(e, _)| slot[e.from] != usize::MAX && slot[e.to] != usize::MAX)
        .map(|(e, rays)| {
            let t = table(e.from, e.to, &|a, b| e.weight * boundary_misfit(rays, &a.plane, &b.plane));
            (e.from, e.to, t)
        })
        .collect();
    for (f, t, cost) in adj {
        mrf.add_edge(slot[f], slot[t], cost);
    }
    for e in problem.graph.knn.edges.iter().filter(|_| cfg.motion_smoothness > 0.0) {
        if slot[e.from] != usize::MAX && slot[e.to] != usize::MAX {
            let w = cfg.motion_smoothness * e.weight;
            let cost = table(e.from, e.to, &|a, b| w * motion_gap(&a.motion, &b.motion));
            mrf.add_edge(slot[e.from], slot[e.to], cost);
        }
    }
    let labels = match mrf.solve_exact(cfg.exact_states) {
        Some((x, _)) => x,
        None => mrf.solve_trws(20).0,
    };

    let mut chosen: Vec<Option<Hypothesis>> = vec![None; n];
    for (s, &i) in active.iter().enumerate() {
        chosen[i] = Some(nodes[i].options[labels[s]]);
    }
    let sources = chosen
        .iter()
        .map(|c| if c.is_some() { InitSource::Homography } else { InitSource::Neighbor })
        .collect();
    fill_from_neighbours(problem, &mut chosen);
    Ok(Initialization {
        hypotheses: chosen.into_iter().map(|c| c.expect("filled")).collect(),
        sources,
        candidates,
    })
}

/// Unit-scale anchor depth of a hypothesis.
fn anchor_depth(problem: &Problem, i: usize, h: &Hypothesis) -> Option<f64> {
    h.plane.lift(&problem.anchor_rays[i]).map(|p| p.z)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Gives every empty superpixel the motion of its most strongly connected
/// resolved K-NN neighbour and a fronto-parallel plane at the neighbours'
/// median anchor depth. Repeats until everything is resolved.
fn fill_from_neighbours(problem: &Problem, chosen: &mut [Option<Hypothesis>]) {
    let n = chosen.len();
    let mut out_edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in &problem.graph.knn.edges {
        out_edges[e.from].push((e.to, e.weight));
        out_edges[e.to].push((e.from, e.weight));
    }
    loop {
        let snapshot = chosen.to_vec();
        let mut progress = false;
        for i in 0..n {
            if snapshot[i].is_some() {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            let mut depths = Vec::new();
            for &(j, w) in &out_edges[i] {
                if let Some(h) = &snapshot[j] {
                    if best.is_none_or(|(bw, bj)| w > bw || (w == bw && j < bj)) {
                        best = Some((w, j));
                    }
                    depths.extend(anchor_depth(problem, j, h));
                }
            }
            if let (Some((_, j)), Some(d)) = (best, median(depths)) {
                chosen[i] = Some(Hypothesis {
                    plane: Plane::fronto_parallel(d),
                    motion: snapshot[j].expect("resolved").motion,
                });
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
    // components the K-NN graph never reached
    if chosen.iter().any(Option::is_none) {
        let resolved: Vec<(usize, Hypothesis)> =
            chosen.iter().enumerate().filter_map(|(i, c)| c.map(|h| (i, h))).collect();
        let d = median(resolved.iter().filter_map(|(i, h)| anchor_depth(problem, *i, h)).collect()).unwrap_or(1.0);
        let motion = resolved[0].1.motion;
        for c in chosen.iter_mut().filter(|c| c.is_none()) {
            *c = Some(Hypothesis {
                plane: Plane::fronto_parallel(d),
                motion,
            });
        }
    }
}
