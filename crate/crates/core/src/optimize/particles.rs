use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::state::{Hypothesis, Problem};

/// Noise scales of the refinement proposals. Angles are in radians; `depth`
/// is the standard deviation of the log of the plane-distance factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub normal: f64,
    pub rotation: f64,
    pub translation: f64,
    pub depth: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        let deg3 = 3f64.to_radians();
        Self {
            normal: deg3,
            rotation: deg3,
            translation: deg3,
            depth: 0.05,
        }
    }
}

impl Perturbation {
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            normal: self.normal * f,
            rotation: self.rotation * f,
            translation: self.translation * f,
            depth: self.depth * f,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.normal == 0.0 && self.rotation == 0.0 && self.translation == 0.0 && self.depth == 0.0
    }
}

/// Candidate hypotheses per superpixel; entry 0 is always the incumbent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Vec<Hypothesis>>,
}

const MAX_REDRAWS: usize = 10;

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Moves a unit vector by a random tangent step of RMS angle `sigma`.
fn perturb_direction<R: Rng>(v: &Vector3<f64>, sigma: f64, rng: &mut R) -> Vector3<f64> {
    let helper = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = v.cross(&helper).normalize();
    let e2 = v.cross(&e1);
    let s = sigma / std::f64::consts::SQRT_2;
    let w = e1 * (gauss(rng) * s) + e2 * (gauss(rng) * s);
    let a = w.norm();
    let out = if a > 0.0 { v * a.cos() + w * (a.sin() / a) } else { *v };
    out.normalize()
}

/// Planes, motions and the anchor in front of both cameras.
fn valid(h: &Hypothesis, ray: &Vector3<f64>) -> bool {
    if !(h.plane.d.is_finite() && h.plane.d > 0.0) {
        return false;
    }
    if ((h.plane.normal.norm() - 1.0).abs() > 1e-9) || ((h.motion.t_hat.norm() - 1.0).abs() > 1e-9) {
        return false;
    }
    match h.plane.lift(ray) {
        Some(p) => (h.motion.rotation * p + h.motion.t_hat).z > 0.0,
        None => false,
    }
}

/// Which components a particle perturbs, by its index.
fn propose<R: Rng>(inc: &Hypothesis, ray: &Vector3<f64>, j: usize, s: &Perturbation, rng: &mut R) -> Hypothesis {
    let mut h = *inc;
    let mode = (j - 1) % 5;
    if mode == 0 || mode == 4 {
        // tilt the plane about its anchor point so the anchor stays put
        if let Some(p) = inc.plane.lift(ray) {
            let n = perturb_direction(&inc.plane.normal, s.normal, rng);
            h.plane.normal = n;
            h.plane.d = n.dot(&p);
        }
    }
    if mode == 1 || mode == 4 {
        let sd = s.rotation / 3f64.sqrt();
        let w = Vector3::new(gauss(rng), gauss(rng), gauss(rng)) * sd;
        h.motion.rotation = (Rotation3::new(w) * Rotation3::from_matrix_unchecked(inc.motion.rotation)).into_inner();
    }
    if mode == 2 || mode == 4 {
        h.motion.t_hat = perturb_direction(&inc.motion.t_hat, s.translation, rng);
    }
    if mode == 3 || mode == 4 {
        h.plane.d *= (s.depth * gauss(rng)).exp();
    }
    h
}

/// Draws `count` candidates per superpixel around the incumbent hypotheses.
///
/// Node `i` in round `round` uses its own stream of a generator seeded by
/// `seed`, so the result does not depend on thread scheduling. Invalid draws
/// are retried a few times, then replaced by the incumbent.
pub fn sample_particles(
    problem: &Problem,
    incumbent: &[Hypothesis],
    count: usize,
    scales: &Perturbation,
    seed: u64,
    round: usize,
) -> ParticleSet {
    let n = incumbent.len();
    let particles = (0..n)
        .into_par_iter()
        .map(|i| {
            let inc = incumbent[i];
            let mut out = Vec::with_capacity(count.max(1));
            out.push(inc);
            if scales.is_zero() {
                out.resize(count.max(1), inc);
                return out;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((round * n + i) as u64);
            let ray = &problem.anchor_rays[i];
            for j in 1..count {
                let mut pick = inc;
                for _ in 0..MAX_REDRAWS {
                    let h = propose(&inc, ray, j, scales, &mut rng);
                    if valid(&h, ray) {
                        pick = h;
                        break;
                    }
                }
                out.push(pick);
            }
            out
        })
        .collect();
    ParticleSet { particles }
}
