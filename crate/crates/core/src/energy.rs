//! The scale-recovery energy
//! `E = E_arap + a1 E_proj + a2 E_cont + a3 E_orient` and its subgradient in lambda.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{DEFAULT_BETA_COLOR, DEFAULT_BETA_SPATIAL, DEFAULT_K};
use crate::sfm::Correspondence;
use crate::state::{Hypothesis, Motion, Problem, SceneState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub w3: f64,
    pub beta_spatial: f64,
    pub beta_color: f64,
    /// Cap on the post-motion boundary gap, scene units.
    pub sigma_trunc: f64,
    /// Cap on the per-edge normal disagreement.
    pub n_trunc: f64,
    pub k: usize,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 0.1,
            w3: 1.0,
            beta_spatial: DEFAULT_BETA_SPATIAL,
            beta_color: DEFAULT_BETA_COLOR,
            sigma_trunc: 0.5,
            n_trunc: 0.5,
            k: DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid energy parameter {name}: {reason}")]
pub struct InvalidParams {
    pub name: &'static str,
    pub reason: &'static str,
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), InvalidParams> {
        let nonneg = |name, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(InvalidParams { name, reason: "must be finite and >= 0" })
            }
        };
        nonneg("alpha1", self.alpha1)?;
        nonneg("alpha2", self.alpha2)?;
        nonneg("alpha3", self.alpha3)?;
        nonneg("w3", self.w3)?;
        if !(self.beta_spatial > 0.0 && self.beta_spatial.is_finite()) {
            return Err(InvalidParams { name: "beta_spatial", reason: "must be > 0" });
        }
        if !(self.beta_color > 0.0 && self.beta_color.is_finite()) {
            return Err(InvalidParams { name: "beta_color", reason: "must be > 0" });
        }
        if !(self.sigma_trunc > 0.0) {
            return Err(InvalidParams { name: "sigma_trunc", reason: "must be > 0" });
        }
        if !(self.n_trunc > 0.0 && self.n_trunc <= 2.0) {
            return Err(InvalidParams { name: "n_trunc", reason: "must lie in (0, 2]" });
        }
        if self.k == 0 {
            return Err(InvalidParams { name: "k", reason: "must be >= 1" });
        }
        Ok(())
    }
}

/// Per-term values; `total` applies the trade-off weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub arap: f64,
    pub proj: f64,
    pub cont: f64,
    pub orient: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn weighted(arap: f64, proj: f64, cont: f64, orient: f64, p: &EnergyParams) -> Self {
        Self {
            arap,
            proj,
            cont,
            orient,
            total: arap + p.alpha1 * proj + p.alpha2 * cont + p.alpha3 * orient,
        }
    }
}

#[inline]
fn unit_or_zero(v: &Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vector3::zeros()
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unit-scale anchor `P` and its moved image `R P + t_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorLift {
    pub p: Vector3<f64>,
    pub q: Vector3<f64>,
}

impl AnchorLift {
    pub fn new(ray: &Vector3<f64>, h: &Hypothesis) -> Option<Self> {
        let p = h.plane.lift(ray)?;
        Some(Self {
            p,
            q: h.motion.rotation * p + h.motion.t_hat,
        })
    }
}

/// One directed K-NN edge of `E_arap` (without the weight).
pub fn arap_pair(
    li: f64,
    lk: f64,
    mi: &Motion,
    mk: &Motion,
    ai: &AnchorLift,
    ak: &AnchorLift,
) -> f64 {
    let rot = (mi.rotation - mk.rotation).norm();
    let trans = (mi.t_hat * li - mk.t_hat * lk).norm();
    let before = (ai.p * li - ak.p * lk).norm();
    let after = (ai.q * li - ak.q * lk).norm();
    rot + trans + (before - after).abs()
}

/// `(d/d li, d/d lk)` of [`arap_pair`].
pub fn arap_pair_grad(
    li: f64,
    lk: f64,
    mi: &Motion,
    mk: &Motion,
    ai: &AnchorLift,
    ak: &AnchorLift,
) -> (f64, f64) {
    let v = unit_or_zero(&(mi.t_hat * li - mk.t_hat * lk));
    let a = ai.p * li - ak.p * lk;
    let b = ai.q * li - ak.q * lk;
    let (na, nb) = (a.norm(), b.norm());
    // distances equal up to rounding count as the kink itself
    let s = if (na - nb).abs() <= 1e-12 * (na + nb) {
        0.0
    } else {
        sign(na - nb)
    };
    let ua = unit_or_zero(&a);
    let ub = unit_or_zero(&b);
    let gi = mi.t_hat.dot(&v) + s * (ai.p.dot(&ua) - ai.q.dot(&ub));
    let gk = -mk.t_hat.dot(&v) + s * (-ak.p.dot(&ua) + ak.q.dot(&ub));
    (gi, gk)
}

/// Unit-scale lifting of a boundary pixel and its moved image, if in front.
pub type SideLift = Option<(Vector3<f64>, Vector3<f64>)>;

pub fn lift_side(rays: &[Vector3<f64>], h: &Hypothesis) -> Vec<SideLift> {
    rays.iter()
        .map(|r| {
            let b = h.plane.lift(r)?;
            Some((b, h.motion.rotation * b + h.motion.t_hat))
        })
        .collect()
}

/// Unit-scale liftings of one adjacency edge's boundary pixels through both
/// incident planes, before (`b`, `c`) and after (`b2`, `c2`) motion.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLift {
    pub b: Vec<Vector3<f64>>,
    pub c: Vec<Vector3<f64>>,
    pub b2: Vec<Vector3<f64>>,
    pub c2: Vec<Vector3<f64>>,
}

impl EdgeLift {
    /// Pixels whose lifting falls behind either camera centre are dropped.
    pub fn new(rays: &[Vector3<f64>], hi: &Hypothesis, hk: &Hypothesis) -> Self {
        Self::from_sides(&lift_side(rays, hi), &lift_side(rays, hk))
    }

    /// Pairs up precomputed [`lift_side`] results of the two incident planes.
    pub fn from_sides(si: &[SideLift], sk: &[SideLift]) -> Self {
        let mut out = Self {
            b: Vec::with_capacity(si.len()),
            c: Vec::with_capacity(si.len()),
            b2: Vec::with_capacity(si.len()),
            c2: Vec::with_capacity(si.len()),
        };
        for (x, y) in si.iter().zip(sk) {
            if let (Some((b, b2)), Some((c, c2))) = (x, y) {
                out.b.push(*b);
                out.b2.push(*b2);
                out.c.push(*c);
                out.c2.push(*c2);
            }
        }
        out
    }

    #[inline]
    fn gap(x: &[Vector3<f64>], y: &[Vector3<f64>], li: f64, lk: f64) -> f64 {
        x.iter()
            .zip(y)
            .map(|(x, y)| (x * li - y * lk).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// `|li B - lk C|_F + min(|li B' - lk C'|_F, sigma)`.
    pub fn value(&self, li: f64, lk: f64, sigma: f64) -> f64 {
        Self::gap(&self.b, &self.c, li, lk) + Self::gap(&self.b2, &self.c2, li, lk).min(sigma)
    }

    pub fn grad(&self, li: f64, lk: f64, sigma: f64) -> (f64, f64) {
        let part = |x: &[Vector3<f64>], y: &[Vector3<f64>]| -> (f64, f64, f64) {
            let (mut gi, mut gk, mut sq) = (0.0, 0.0, 0.0);
            for (x, y) in x.iter().zip(y) {
                let r = x * li - y * lk;
                gi += x.dot(&r);
                gk -= y.dot(&r);
                sq += r.norm_squared();
            }
            let f = sq.sqrt();
            if f > 0.0 {
                (gi / f, gk / f, f)
            } else {
                (0.0, 0.0, 0.0)
            }
        };
        let (gi1, gk1, _) = part(&self.b, &self.c);
        let (gi2, gk2, f2) = part(&self.b2, &self.c2);
        if f2 < sigma {
            (gi1 + gi2, gk1 + gk2)
        } else {
            (gi1, gk1)
        }
    }
}

/// Mean reprojection error of one superpixel's flow under its homography,
/// scaled by `w3`.
pub fn proj_node(obs: &[Correspondence], h: &Hypothesis, problem: &Problem, w3: f64) -> f64 {
    if obs.is_empty() {
        return 0.0;
    }
    let hm = h.homography(&problem.intrinsics);
    let sum: f64 = obs
        .iter()
        .map(|c| {
            let m = hm * Vector3::new(c.p.x, c.p.y, 1.0);
            if m.z.abs() < 1e-300 {
                return f64::INFINITY;
            }
            ((m.x / m.z - c.q.x).powi(2) + (m.y / m.z - c.q.y).powi(2)).sqrt()
        })
        .sum();
    w3 * sum / obs.len() as f64
}

#[inline]
pub fn orient_pair(ni: &Vector3<f64>, nk: &Vector3<f64>, n_trunc: f64) -> f64 {
    (1.0 - ni.dot(nk)).abs().min(n_trunc)
}

/// Geometry at unit scale for a fixed set of hypotheses; makes the
/// lambda-dependent terms cheap to re-evaluate during the scale solve.
#[derive(Debug, Clone)]
pub struct Lifted {
    pub anchors: Vec<Option<AnchorLift>>,
    pub edges: Vec<EdgeLift>,
}

impl Lifted {
    pub fn new(problem: &Problem, hyps: &[Hypothesis]) -> Self {
        let anchors = (0..problem.len())
            .map(|i| AnchorLift::new(&problem.anchor_rays[i], &hyps[i]))
            .collect();
        let edges = problem
            .graph
            .adjacency
            .par_iter()
            .zip(&problem.edge_rays)
            .map(|(e, rays)| EdgeLift::new(rays, &hyps[e.from], &hyps[e.to]))
            .collect();
        Self { anchors, edges }
    }
}

/// Symmetric 2x2 block `[a, b; b, c]` with negative eigenvalues clipped to zero.
fn psd_block([a, b, c]: [f64; 3]) -> [f64; 3] {
    let m = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    if m - r >= 0.0 {
        return [a, b, c];
    }
    let top = m + r;
    if top <= 0.0 || r == 0.0 {
        return [0.0; 3];
    }
    // projector onto the top eigenvector
    let (u, v) = if a >= c { (a - m + r, b) } else { (b, c - m + r) };
    let nn = u * u + v * v;
    [top * u * u / nn, top * u * v / nn, top * v * v / nn]
}

/// The lambda-dependent part of the energy (`E_arap` and `E_cont`) plus the
/// constant `E_proj` / `E_orient` values for fixed hypotheses.
#[derive(Debug, Clone)]
pub struct ScaleObjective<'a> {
    pub problem: &'a Problem,
    pub hyps: &'a [Hypothesis],
    pub params: EnergyParams,
    pub lifted: Lifted,
    pub proj: f64,
    pub orient: f64,
}

impl<'a> ScaleObjective<'a> {
    pub fn new(problem: &'a Problem, hyps: &'a [Hypothesis], params: &EnergyParams) -> Self {
        Self {
            problem,
            hyps,
            params: *params,
            lifted: Lifted::new(problem, hyps),
            proj: e_proj_of(problem, hyps, params),
            orient: e_orient_of(problem, hyps, params),
        }
    }

    fn arap(&self, lambda: &[f64]) -> f64 {
        let per_edge: Vec<f64> = self
            .problem
            .graph
            .knn
            .edges
            .par_iter()
            .map(|e| {
                match (&self.lifted.anchors[e.from], &self.lifted.anchors[e.to]) {
                    (Some(ai), Some(ak)) => {
                        e.weight
                            * arap_pair(
                                lambda[e.from],
                                lambda[e.to],
                                &self.hyps[e.from].motion,
                                &self.hyps[e.to].motion,
                                ai,
                                ak,
                            )
                    }
                    _ => f64::INFINITY,
                }
            })
            .collect();
        per_edge.iter().sum()
    }

    fn cont(&self, lambda: &[f64]) -> f64 {
        let per_edge: Vec<f64> = self
            .problem
            .graph
            .adjacency
            .par_iter()
            .zip(&self.lifted.edges)
            .map(|(e, l)| e.weight * l.value(lambda[e.from], lambda[e.to], self.params.sigma_trunc))
            .collect();
        per_edge.iter().sum()
    }

    pub fn breakdown(&self, lambda: &[f64]) -> EnergyBreakdown {
        EnergyBreakdown::weighted(
            self.arap(lambda),
            self.proj,
            self.cont(lambda),
            self.orient,
            &self.params,
        )
    }

    pub fn value(&self, lambda: &[f64]) -> f64 {
        self.breakdown(lambda).total
    }

    /// Curvature model of the lambda-dependent energy around `lambda`: one
    /// symmetric block `(i, k, [h_ii, h_ik, h_kk])` per edge, in edge order.
    ///
    /// Norms `c |v(lambda)|` contribute their exact Hessian. Distance
    /// differences `c |u|` have a kink at zero and contribute the reweighted
    /// curvature `c g g^T / |u|` of the square of their linearization instead,
    /// which keeps model steps from skipping across the kink.
    pub fn curvature_model(&self, lambda: &[f64]) -> Vec<(usize, usize, [f64; 3])> {
        const REL_FLOOR: f64 = 1e-8;
        // c |l_i x - l_k y| for Gram entries (xx, xy, yy)
        let norm_block = |c: f64, li: f64, lk: f64, xx: f64, xy: f64, yy: f64| -> [f64; 3] {
            let q = (li * li * xx - 2.0 * li * lk * xy + lk * lk * yy).max(0.0);
            let s = q.sqrt().max(REL_FLOOR * (li * li * xx + lk * lk * yy).sqrt()).max(1e-300);
            // (M - (M l)(M l)^T / q) / sqrt(q), M = [[xx, -xy], [-xy, yy]]
            let (mi, mk) = (xx * li - xy * lk, -xy * li + yy * lk);
            // at the apex the radial direction is kinked too; keep the full M
            let r = if q.sqrt() > s * (1.0 - 1e-9) { 1.0 / q } else { 0.0 };
            psd_block([
                c * (xx - mi * mi * r) / s,
                c * (-xy - mi * mk * r) / s,
                c * (yy - mk * mk * r) / s,
            ])
        };
        let gram = |x: &[Vector3<f64>], y: &[Vector3<f64>]| -> (f64, f64, f64) {
            x.iter().zip(y).fold((0.0, 0.0, 0.0), |(a, b, c), (x, y)| {
                (a + x.norm_squared(), b + x.dot(y), c + y.norm_squared())
            })
        };
        let add = |a: [f64; 3], b: [f64; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
        let mut out: Vec<(usize, usize, [f64; 3])> = self
            .problem
            .graph
            .knn
            .edges
            .par_iter()
            .map(|e| {
                let (li, lk) = (lambda[e.from], lambda[e.to]);
                let (Some(ai), Some(ak)) = (&self.lifted.anchors[e.from], &self.lifted.anchors[e.to]) else {
                    return (e.from, e.to, [0.0; 3]);
                };
                let (ti, tk) = (self.hyps[e.from].motion.t_hat, self.hyps[e.to].motion.t_hat);
                let mut b = norm_block(e.weight, li, lk, ti.norm_squared(), ti.dot(&tk), tk.norm_squared());
                let a = ai.p * li - ak.p * lk;
                let q = ai.q * li - ak.q * lk;
                let (na, nq) = (a.norm(), q.norm());
                if na > 0.0 && nq > 0.0 {
                    let gi = ai.p.dot(&a) / na - ai.q.dot(&q) / nq;
                    let gk = -ak.p.dot(&a) / na + ak.q.dot(&q) / nq;
                    let u = (na - nq).abs().max(REL_FLOOR * (na + nq));
                    let c = e.weight / u;
                    b = add(b, [c * gi * gi, c * gi * gk, c * gk * gk]);
                }
                (e.from, e.to, b)
            })
            .collect();
        let a2 = self.params.alpha2;
        if a2 != 0.0 {
            let sigma = self.params.sigma_trunc;
            let adj: Vec<(usize, usize, [f64; 3])> = self
                .problem
                .graph
                .adjacency
                .par_iter()
                .zip(&self.lifted.edges)
                .map(|(e, l)| {
                    let (li, lk) = (lambda[e.from], lambda[e.to]);
                    let c = a2 * e.weight;
                    let (xx, xy, yy) = gram(&l.b, &l.c);
                    let mut b = norm_block(c, li, lk, xx, xy, yy);
                    let (xx, xy, yy) = gram(&l.b2, &l.c2);
                    if EdgeLift::gap(&l.b2, &l.c2, li, lk) < sigma {
                        b = add(b, norm_block(c, li, lk, xx, xy, yy));
                    }
                    (e.from, e.to, b)
                })
                .collect();
            out.extend(adj);
        }
        out
    }

    /// Subgradient of the total energy with respect to `lambda`.
    pub fn grad(&self, lambda: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; lambda.len()];
        let knn: Vec<(usize, f64, usize, f64)> = self
            .problem
            .graph
            .knn
            .edges
            .par_iter()
            .map(|e| match (&self.lifted.anchors[e.from], &self.lifted.anchors[e.to]) {
                (Some(ai), Some(ak)) => {
                    let (gi, gk) = arap_pair_grad(
                        lambda[e.from],
                        lambda[e.to],
                        &self.hyps[e.from].motion,
                        &self.hyps[e.to].motion,
                        ai,
                        ak,
                    );
                    (e.from, e.weight * gi, e.to, e.weight * gk)
                }
                _ => (e.from, f64::NAN, e.to, f64::NAN),
            })
            .collect();
        for (i, gi, k, gk) in knn {
            g[i] += gi;
            g[k] += gk;
        }
        let a2 = self.params.alpha2;
        if a2 != 0.0 {
            let adj: Vec<(usize, f64, usize, f64)> = self
                .problem
                .graph
                .adjacency
                .par_iter()
                .zip(&self.lifted.edges)
                .map(|(e, l)| {
                    let (gi, gk) = l.grad(lambda[e.from], lambda[e.to], self.params.sigma_trunc);
                    (e.from, a2 * e.weight * gi, e.to, a2 * e.weight * gk)
                })
                .collect();
            for (i, gi, k, gk) in adj {
                g[i] += gi;
                g[k] += gk;
            }
        }
        g
    }
}

fn e_proj_of(problem: &Problem, hyps: &[Hypothesis], p: &EnergyParams) -> f64 {
    let per_node: Vec<f64> = (0..problem.len())
        .into_par_iter()
        .map(|i| proj_node(&problem.observations[i], &hyps[i], problem, p.w3))
        .collect();
    per_node.iter().sum()
}

fn e_orient_of(problem: &Problem, hyps: &[Hypothesis], p: &EnergyParams) -> f64 {
    problem
        .graph
        .adjacency
        .iter()
        .map(|e| orient_pair(&hyps[e.from].plane.normal, &hyps[e.to].plane.normal, p.n_trunc))
        .sum()
}

pub fn e_arap(problem: &Problem, state: &SceneState, p: &EnergyParams) -> f64 {
    ScaleObjective::new(problem, &state.hypotheses, p).arap(&state.lambda)
}

pub fn e_proj(problem: &Problem, state: &SceneState, p: &EnergyParams) -> f64 {
    e_proj_of(problem, &state.hypotheses, p)
}

pub fn e_cont(problem: &Problem, state: &SceneState, p: &EnergyParams) -> f64 {
    ScaleObjective::new(problem, &state.hypotheses, p).cont(&state.lambda)
}

pub fn e_orient(problem: &Problem, state: &SceneState, p: &EnergyParams) -> f64 {
    e_orient_of(problem, &state.hypotheses, p)
}

pub fn energy_breakdown(problem: &Problem, state: &SceneState, p: &EnergyParams) -> EnergyBreakdown {
    ScaleObjective::new(problem, &state.hypotheses, p).breakdown(&state.lambda)
}

pub fn total_energy(problem: &Problem, state: &SceneState, p: &EnergyParams) -> f64 {
    energy_breakdown(problem, state, p).total
}

pub fn grad_lambda(problem: &Problem, state: &SceneState, p: &EnergyParams) -> Vec<f64> {
    ScaleObjective::new(problem, &state.hypotheses, p).grad(&state.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::graph::SceneGraph;
    use crate::io::{DenseFlow, ImageRGB};
    use crate::segmentation::{grid_segment, SuperpixelPartition};
    use crate::state::Plane;
    use nalgebra::{Matrix3, Rotation3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k_small(w: usize, h: usize) -> Intrinsics {
        Intrinsics::new(50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    fn problem(part: SuperpixelPartition, k: Intrinsics, flow: &DenseFlow, kk: usize) -> Problem {
        let img = ImageRGB::filled(part.width, part.height, [0.5; 3]);
        let graph = SceneGraph::build(&part, &img, kk, 0.05, 5.0);
        Problem::new(k, part, graph, flow)
    }

    fn hyp(n: Vector3<f64>, d: f64, r: Matrix3<f64>, t: Vector3<f64>) -> Hypothesis {
        Hypothesis {
            plane: Plane { normal: n.normalize(), d },
            motion: Motion { rotation: r, t_hat: t.normalize() },
        }
    }

    #[test]
    fn global_rigid_scene_has_zero_energy() {
        let (w, h) = (24, 16);
        let part = grid_segment(w, h, 6).unwrap();
        let k = k_small(w, h);
        let r = Rotation3::new(Vector3::new(0.01, 0.02, 0.0)).into_inner();
        let t = Vector3::new(0.3, 0.1, 1.0).normalize();
        let n = Vector3::new(0.1, 0.0, 1.0).normalize();
        let hy = hyp(n, 4.0, r, t);
        // render the exact flow of that single plane
        let hm = hy.homography(&k);
        let mut u = vec![0f32; w * h];
        let mut v = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let m = hm * Vector3::new(x as f64, y as f64, 1.0);
                u[y * w + x] = (m.x / m.z - x as f64) as f32;
                v[y * w + x] = (m.y / m.z - y as f64) as f32;
            }
        }
        let flow = DenseFlow::new(w, h, u, v).unwrap();
        let pb = problem(part, k, &flow, 3);
        let n_sp = pb.len();
        let state = SceneState {
            hypotheses: vec![hy; n_sp],
            lambda: vec![1.0 / n_sp as f64; n_sp],
        };
        let p = EnergyParams::default();
        let b = energy_breakdown(&pb, &state, &p);
        assert!(b.arap.abs() < 1e-12, "{b:?}");
        assert!(b.cont.abs() < 1e-12);
        assert!(b.orient.abs() < 1e-12);
        // f32 flow storage limits the reprojection floor
        assert!(b.proj < 1e-4);
        let g = grad_lambda(&pb, &state, &p);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        assert!(g.iter().all(|x| (x - mean).abs() < 1e-9));
    }

    fn two_node_problem() -> Problem {
        // two 1x1 superpixels side by side
        let part = SuperpixelPartition::from_labels(2, 1, vec![0, 1]).unwrap();
        let flow = DenseFlow::zeros(2, 1);
        problem(part, Intrinsics::new(10.0, 10.0, 0.5, 0.5, 2, 1).unwrap(), &flow, 1)
    }

    #[test]
    fn duplicate_nodes_cost_nothing() {
        let pb = two_node_problem();
        let h = hyp(Vector3::z(), 1.0, Matrix3::identity(), Vector3::z());
        let st = SceneState { hypotheses: vec![h, h], lambda: vec![0.5, 0.5] };
        // anchors differ in pixel position, so only the motion part is zero; check by term
        let o = ScaleObjective::new(&pb, &st.hypotheses, &EnergyParams::default());
        let a = o.lifted.anchors[0].unwrap();
        let b = o.lifted.anchors[1].unwrap();
        let m = h.motion;
        assert_eq!(arap_pair(0.5, 0.5, &m, &m, &a, &a), 0.0);
        // pure translation along z keeps the anchor distance: zero as well
        assert!(arap_pair(0.5, 0.5, &m, &m, &a, &b).abs() < 1e-15);
    }

    #[test]
    fn arap_matches_hand_evaluation() {
        let pb = two_node_problem();
        let r1 = Rotation3::new(Vector3::new(0.0, 0.1, 0.0)).into_inner();
        let r2 = Rotation3::new(Vector3::new(0.05, 0.0, 0.02)).into_inner();
        let t1 = Vector3::new(1.0, 0.0, 0.0);
        let t2 = Vector3::new(0.0, 0.6, 0.8);
        let n1 = Vector3::new(0.0, 0.0, 1.0);
        let n2 = Vector3::new(0.6, 0.0, 0.8);
        let h1 = hyp(n1, 2.0, r1, t1);
        let h2 = hyp(n2, 3.0, r2, t2);
        let lam = [0.3, 0.7];
        let st = SceneState { hypotheses: vec![h1, h2], lambda: lam.to_vec() };
        let p = EnergyParams::default();

        // independent evaluation straight from the definitions
        let k = pb.intrinsics;
        let x0 = Vector3::new((0.0 - k.cx) / k.fx, (0.0 - k.cy) / k.fy, 1.0);
        let x1 = Vector3::new((1.0 - k.cx) / k.fx, (0.0 - k.cy) / k.fy, 1.0);
        let a0 = x0 * (lam[0] * 2.0 / n1.dot(&x0));
        let a1 = x1 * (lam[1] * 3.0 / n2.dot(&x1));
        let a0p = r1 * a0 + t1 * lam[0];
        let a1p = r2 * a1 + t2 * lam[1];
        let w = (-0.05f64 * 1.0).exp();
        let edge = |ri: &Matrix3<f64>, rk: &Matrix3<f64>, ti: Vector3<f64>, tk: Vector3<f64>, ai: Vector3<f64>, ak: Vector3<f64>, aip: Vector3<f64>, akp: Vector3<f64>| {
            let mut s = 0.0;
            for rr in 0..3 {
                for cc in 0..3 {
                    s += (ri[(rr, cc)] - rk[(rr, cc)]).powi(2);
                }
            }
            let rot = s.sqrt();
            let tr = ti - tk;
            let tr = (tr.x * tr.x + tr.y * tr.y + tr.z * tr.z).sqrt();
            let before = ((ai - ak).x.powi(2) + (ai - ak).y.powi(2) + (ai - ak).z.powi(2)).sqrt();
            let after =
                ((aip - akp).x.powi(2) + (aip - akp).y.powi(2) + (aip - akp).z.powi(2)).sqrt();
            w * (rot + tr) + w * (before - after).abs()
        };
        let expect = edge(&r1, &r2, t1 * lam[0], t2 * lam[1], a0, a1, a0p, a1p)
            + edge(&r2, &r1, t2 * lam[1], t1 * lam[0], a1, a0, a1p, a0p);
        let got = e_arap(&pb, &st, &p);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn proj_hand_case() {
        // one superpixel of two pixels, identity homography, flow (1,0) on one pixel
        let part = SuperpixelPartition::from_labels(2, 1, vec![0, 0]).unwrap();
        let flow = DenseFlow::new(2, 1, vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let k = Intrinsics::new(10.0, 10.0, 0.5, 0.5, 2, 1).unwrap();
        let pb = problem(part, k, &flow, 1);
        // t_hat along the plane normal with huge d: H -> I
        let h = hyp(Vector3::z(), 1e300, Matrix3::identity(), Vector3::z());
        let st = SceneState { hypotheses: vec![h], lambda: vec![1.0] };
        let mut p = EnergyParams::default();
        p.w3 = 0.7;
        let e = e_proj(&pb, &st, &p);
        assert!((e - 0.7 * 0.5 * 1.0).abs() < 1e-12, "{e}");
        let st2 = SceneState { lambda: vec![2.0], ..st.clone() };
        assert_eq!(e_proj(&pb, &st2, &p), e);
    }

    #[test]
    fn orientation_truncation() {
        let pb = two_node_problem();
        let mut p = EnergyParams::default();
        let mk = |n1: Vector3<f64>, n2: Vector3<f64>| SceneState {
            hypotheses: vec![
                hyp(n1, 1.0, Matrix3::identity(), Vector3::z()),
                hyp(n2, 1.0, Matrix3::identity(), Vector3::z()),
            ],
            lambda: vec![0.5, 0.5],
        };
        let same = mk(Vector3::z(), Vector3::z());
        assert_eq!(e_orient(&pb, &same, &p), 0.0);
        p.n_trunc = 0.5;
        let ortho = mk(Vector3::z(), Vector3::x());
        assert!((e_orient(&pb, &ortho, &p) - 2.0 * 0.5).abs() < 1e-15);
        p.n_trunc = 2.0;
        assert!(
            (orient_pair(&Vector3::z(), &-Vector3::z(), p.n_trunc) - 2.0).abs() < 1e-15
        );
    }

    #[test]
    fn continuity_gap_and_cap() {
        let rays = vec![Vector3::new(0.0, 0.0, 1.0)];
        let hi = hyp(Vector3::z(), 1.0, Matrix3::identity(), Vector3::z());
        let mut hk = hyp(Vector3::z(), 1.2, Matrix3::identity(), -Vector3::z());
        let l = EdgeLift::new(&rays, &hi, &hk);
        // first-frame gap 0.2, second-frame gap |2 - 0.2| = 1.8 capped at 0.5
        assert!((l.value(1.0, 1.0, 0.5) - (0.2 + 0.5)).abs() < 1e-12);
        hk.motion.t_hat = Vector3::z();
        let l = EdgeLift::new(&rays, &hi, &hk);
        assert!((l.value(1.0, 1.0, 0.5) - 0.4).abs() < 1e-12);
        // coplanar with equal motion
        let l = EdgeLift::new(&rays, &hi, &hi);
        assert_eq!(l.value(0.3, 0.3, 0.5), 0.0);
    }

    #[test]
    fn continuity_matches_independent_evaluation() {
        let part = SuperpixelPartition::from_labels(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let k = Intrinsics::new(20.0, 20.0, 2.0, 1.0, 4, 2).unwrap();
        let pixels = vec![[0.1f32, 0.2, 0.3], [0.5; 3], [0.9, 0.1, 0.0], [0.2; 3]];
        let pixels = [pixels.clone(), pixels].concat();
        let img = ImageRGB::new(4, 2, pixels).unwrap();
        let graph = SceneGraph::build(&part, &img, 1, 0.05, 5.0);
        let pb = Problem::new(k, part, graph, &DenseFlow::zeros(4, 2));
        let h1 = hyp(Vector3::new(0.1, 0.0, 1.0), 2.0, Rotation3::new(Vector3::new(0.0, 0.2, 0.0)).into_inner(), Vector3::new(1.0, 0.0, 0.2));
        let h2 = hyp(Vector3::new(-0.2, 0.1, 1.0), 2.5, Matrix3::identity(), Vector3::new(0.0, 1.0, 0.0));
        let lam = [0.45, 0.55];
        let st = SceneState { hypotheses: vec![h1, h2], lambda: lam.to_vec() };
        let p = EnergyParams { sigma_trunc: 10.0, ..Default::default() };
        let hs = [h1, h2];
        let mut expect = 0.0;
        for e in &pb.graph.adjacency {
            let (i, kk) = (e.from, e.to);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for px in &e.pixels {
                let ray = Vector3::new((px.x as f64 - 2.0) / 20.0, (px.y as f64 - 1.0) / 20.0, 1.0);
                let xb = ray * (lam[i] * hs[i].plane.d / hs[i].plane.normal.dot(&ray));
                let xc = ray * (lam[kk] * hs[kk].plane.d / hs[kk].plane.normal.dot(&ray));
                let xb2 = hs[i].motion.rotation * xb + hs[i].motion.t_hat * lam[i];
                let xc2 = hs[kk].motion.rotation * xc + hs[kk].motion.t_hat * lam[kk];
                s1 += (xb - xc).norm_squared();
                s2 += (xb2 - xc2).norm_squared();
            }
            let wbar = e.pixel_weights.iter().sum::<f64>() / e.pixel_weights.len() as f64;
            expect += wbar * (s1.sqrt() + s2.sqrt().min(p.sigma_trunc));
        }
        let got = e_cont(&pb, &st, &p);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (Problem, Vec<Hypothesis>) {
        let (w, h) = (40, 30);
        let part = grid_segment(w, h, n).unwrap();
        let k = Intrinsics::new(60.0, 60.0, 20.0, 15.0, w, h).unwrap();
        let pixels = (0..w * h)
            .map(|_| [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()])
            .collect();
        let img = ImageRGB::new(w, h, pixels).unwrap();
        let graph = SceneGraph::build(&part, &img, 4, 0.05, 5.0);
        let pb = Problem::new(k, part, graph, &DenseFlow::zeros(w, h));
        let hyps = (0..pb.len())
            .map(|_| {
                hyp(
                    Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0),
                    rng.random_range(1.0..6.0),
                    Rotation3::new(Vector3::new(
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                    ))
                    .into_inner(),
                    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        (pb, hyps)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = EnergyParams { sigma_trunc: 2.0, ..Default::default() };
        let mut checked = 0;
        while checked < 30 {
            let n = rng.random_range(2..=20);
            let (pb, hyps) = random_problem(&mut rng, n);
            let raw: Vec<f64> = (0..pb.len()).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let lam: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let obj = ScaleObjective::new(&pb, &hyps, &p);
            let g = obj.grad(&lam);
            let h = 1e-6;
            let fd: Vec<f64> = (0..lam.len())
                .map(|i| {
                    let mut a = lam.clone();
                    let mut b = lam.clone();
                    a[i] += h;
                    b[i] -= h;
                    (obj.value(&a) - obj.value(&b)) / (2.0 * h)
                })
                .collect();
            let scale = 1.0 + fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err / scale < 1e-5, "n={n} err {err} scale {scale}");
            checked += 1;
        }
    }

    #[test]
    fn psd_block_clips_negative_curvature() {
        // already PSD: untouched
        assert_eq!(psd_block([2.0, 1.0, 3.0]), [2.0, 1.0, 3.0]);
        // eigenvalues 3 and -1 along (1, 1) and (1, -1)
        let b = psd_block([1.0, 2.0, 1.0]);
        for (got, want) in b.iter().zip([1.5, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(psd_block([-1.0, 0.0, -2.0]), [0.0; 3]);
        assert_eq!(psd_block([0.0, 0.0, -2.0]), [0.0; 3]);
    }

    #[test]
    fn proj_and_orient_ignore_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pb, hyps) = random_problem(&mut rng, 12);
        let p = EnergyParams::default();
        let n = pb.len();
        let a = SceneState { hypotheses: hyps.clone(), lambda: vec![1.0 / n as f64; n] };
        let mut b = a.clone();
        b.lambda.iter_mut().enumerate().for_each(|(i, l)| *l = (i + 1) as f64);
        assert_eq!(e_proj(&pb, &a, &p), e_proj(&pb, &b, &p));
        assert_eq!(e_orient(&pb, &a, &p), e_orient(&pb, &b, &p));
    }

    #[test]
    fn zero_weights_leave_arap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (pb, hyps) = random_problem(&mut rng, 8);
        let n = pb.len();
        let st = SceneState { hypotheses: hyps, lambda: vec![1.0 / n as f64; n] };
        let p = EnergyParams { alpha1: 0.0, alpha2: 0.0, alpha3: 0.0, ..Default::default() };
        assert_eq!(total_energy(&pb, &st, &p), e_arap(&pb, &st, &p));
    }

    #[test]
    fn terms_are_non_negative_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let (pb, hyps) = random_problem(&mut rng, 10);
            let lam: Vec<f64> = (0..pb.len()).map(|_| rng.random_range(0.01..1.0)).collect();
            let st = SceneState { hypotheses: hyps.clone(), lambda: lam.clone() };
            let p = EnergyParams::default();
            let b = energy_breakdown(&pb, &st, &p);
            assert!(b.arap >= 0.0 && b.proj >= 0.0 && b.cont >= 0.0 && b.orient >= 0.0);
            assert!(b.orient <= p.n_trunc * pb.graph.adjacency.len() as f64 + 1e-12);
            let obj = ScaleObjective::new(&pb, &hyps, &p);
            for (e, l) in pb.graph.adjacency.iter().zip(&obj.lifted.edges) {
                let second = EdgeLift::gap(&l.b2, &l.c2, lam[e.from], lam[e.to]).min(p.sigma_trunc);
                assert!(e.weight * second <= e.weight * p.sigma_trunc);
            }
        }
    }

    #[test]
    fn relabeling_is_equivariant() {
        // mirror a 2x1 layout so ids swap while geometry stays
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, h) = (20, 10);
        let k = Intrinsics::new(30.0, 30.0, 10.0, 5.0, w, h).unwrap();
        let left: Vec<u32> = (0..w * h).map(|i| if i % w < w / 2 { 0 } else { 1 }).collect();
        let right: Vec<u32> = left.iter().map(|l| 1 - l).collect();
        let img = ImageRGB::filled(w, h, [0.3; 3]);
        let flow = DenseFlow::zeros(w, h);
        let build = |labels: Vec<u32>| {
            let part = SuperpixelPartition::from_labels(w, h, labels).unwrap();
            let graph = SceneGraph::build(&part, &img, 1, 0.05, 5.0);
            Problem::new(k, part, graph, &flow)
        };
        let pa = build(left);
        let pbm = build(right);
        let (_, hyps) = random_problem(&mut rng, 2);
        let hyps = vec![hyps[0], hyps[1]];
        let p = EnergyParams::default();
        let sa = SceneState { hypotheses: hyps.clone(), lambda: vec![0.3, 0.7] };
        let sb = SceneState { hypotheses: vec![hyps[1], hyps[0]], lambda: vec![0.7, 0.3] };
        let ea = total_energy(&pa, &sa, &p);
        let eb = total_energy(&pbm, &sb, &p);
        assert!((ea - eb).abs() < 1e-12 * ea.max(1.0), "{ea} vs {eb}");
    }

    #[test]
    fn default_params_validate() {
        assert!(EnergyParams::default().validate().is_ok());
        let bad = EnergyParams { n_trunc: 3.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EnergyParams { sigma_trunc: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
