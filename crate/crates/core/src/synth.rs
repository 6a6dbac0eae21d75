//! Ground-truth piecewise-planar scenes: geometry, motions, scales, exact
//! flow and both depth maps.
//!
//! Patches tile the image as a regular grid. The surface has continuous,
//! separable inverse depth `rho(x, y) = f(x) + g(y)` with `f`, `g` piecewise
//! linear in normalized image coordinates, so each tile is a plane and
//! neighbouring planes meet along the tile borders.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::io::{
    load_depth_pfm, load_flow, load_image_rgb, load_intrinsics, load_json, load_label_png, save_depth_pfm,
    save_flow, save_image_rgb, save_intrinsics, save_json, save_label_png, DenseFlow, DepthMap, ImageRGB, IoError,
};
use crate::render::{depth_frame1, depth_frame2, MovingPlane};
use crate::segmentation::{grid_shape, SuperpixelPartition};
use crate::state::{Hypothesis, Motion, Plane};

/// Half-width of the uniform distribution outlier flow vectors are drawn from, pixels.
pub const OUTLIER_RANGE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    /// One rigid motion for the whole scene.
    Rigid,
    /// A shared motion composed with a per-patch rotation about the patch
    /// anchor; distances between anchors are preserved exactly.
    Articulated,
    /// Unrelated per-patch motions (violates as-rigid-as-possible).
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Requested tile count; rounded to the nearest near-square grid.
    pub n_patches: usize,
    pub family: MotionFamily,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub seed: u64,
    /// Gaussian flow noise, pixels.
    pub flow_noise: f64,
    pub outlier_frac: f64,
    /// Largest translation-magnitude ratio between patches (articulated and
    /// independent families).
    pub max_scale_ratio: f64,
    /// Articulated scenes whose anchor distances drift more than this are rejected.
    pub max_arap_residual: f64,
    /// Magnitude of the shared translation, scene units.
    pub translation: f64,
    /// Upper bound of the shared rotation angle, degrees.
    pub rotation_deg: f64,
    /// Range of the inverse-depth knot values of each separable component.
    pub inverse_depth: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_patches: 4,
            family: MotionFamily::Rigid,
            width: 160,
            height: 120,
            focal: 120.0,
            seed: 0,
            flow_noise: 0.0,
            outlier_frac: 0.0,
            max_scale_ratio: 3.0,
            max_arap_residual: 1e-9,
            translation: 0.4,
            rotation_deg: 2.0,
            inverse_depth: [0.06, 0.15],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene spec field {field}: {reason}")]
    InvalidSpec {
        field: &'static str,
        reason: &'static str,
    },
    #[error("infeasible scene: {0}")]
    InfeasibleSpec(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("scene spec: {0}")]
    Json(#[from] serde_json::Error),
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |field, reason| Err(SynthError::InvalidSpec { field, reason });
        if self.n_patches == 0 {
            return bad("n_patches", "must be at least 1");
        }
        if self.width < 2 || self.height < 2 || self.width * self.height > 1 << 24 {
            return bad("width", "image must be between 2x2 and 2^24 pixels");
        }
        if self.n_patches > self.width * self.height {
            return bad("n_patches", "more patches than pixels");
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return bad("focal", "must be positive");
        }
        if !(self.flow_noise.is_finite() && self.flow_noise >= 0.0) {
            return bad("flow_noise", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.outlier_frac) {
            return bad("outlier_frac", "must lie in [0, 1)");
        }
        if !(self.max_scale_ratio.is_finite() && self.max_scale_ratio >= 1.0) {
            return bad("max_scale_ratio", "must be >= 1");
        }
        if !(self.max_arap_residual >= 0.0) {
            return bad("max_arap_residual", "must be >= 0");
        }
        if !(self.translation.is_finite() && self.translation > 0.0) {
            return bad("translation", "must be positive");
        }
        if !(self.rotation_deg.is_finite() && (0.0..=45.0).contains(&self.rotation_deg)) {
            return bad("rotation_deg", "must lie in [0, 45]");
        }
        let [lo, hi] = self.inverse_depth;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
            return bad("inverse_depth", "need 0 < low <= high");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics, SynthError> {
        Intrinsics::new(
            self.focal,
            self.focal,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
        .map_err(|e| SynthError::Io(e.into()))
    }
}

pub fn parse_scene_spec(text: &str) -> Result<SceneSpec, SynthError> {
    let spec: SceneSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

/// Ground truth of one patch: unit-scale hypothesis plus normalized scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePatch {
    pub hypothesis: Hypothesis,
    pub lambda: f64,
}

/// What `scene.json` stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    /// Scene units per unit of `lambda * d`.
    pub scale: f64,
    pub patches: Vec<TruePatch>,
    pub arap_residual: f64,
}

impl SceneTruth {
    pub fn lambda(&self) -> Vec<f64> {
        self.patches.iter().map(|p| p.lambda).collect()
    }

    pub fn moving_planes(&self) -> Vec<MovingPlane> {
        self.patches
            .iter()
            .map(|p| MovingPlane::from_hypothesis(&p.hypothesis, self.scale * p.lambda))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub intrinsics: Intrinsics,
    pub truth: SceneTruth,
    /// Row-major patch id of every frame-1 pixel.
    pub labels: Vec<u32>,
    /// Analytic flow before corruption and `f32` storage.
    pub flow_exact: Vec<[f64; 2]>,
    pub flow: DenseFlow,
    pub depth1: DepthMap,
    pub depth2: DepthMap,
    pub ref_image: ImageRGB,
    pub next_image: ImageRGB,
}

impl SyntheticScene {
    pub fn arap_residual(&self) -> f64 {
        self.truth.arap_residual
    }

    pub fn partition(&self) -> SuperpixelPartition {
        SuperpixelPartition::from_labels(self.intrinsics.width, self.intrinsics.height, self.labels.clone())
            .expect("synthetic tiles form a valid partition")
    }
}

/// Knot positions (normalized coordinates) and values of one separable component.
struct Profile {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl Profile {
    /// Knots sit halfway between the last pixel of one tile and the first of the next.
    fn new<R: Rng>(pixels: usize, tiles: usize, centre: f64, focal: f64, range: [f64; 2], rng: &mut R) -> Self {
        let mut knots = vec![(-0.5 - centre) / focal];
        for t in 1..tiles {
            let first = (t * pixels).div_ceil(tiles);
            knots.push((first as f64 - 0.5 - centre) / focal);
        }
        knots.push((pixels as f64 - 0.5 - centre) / focal);
        let values = (0..=tiles)
            .map(|_| if range[1] > range[0] { rng.random_range(range[0]..=range[1]) } else { range[0] })
            .collect();
        Self { knots, values }
    }

    /// `(slope, intercept)` on tile `t`.
    fn segment(&self, t: usize) -> (f64, f64) {
        let (x0, x1) = (self.knots[t], self.knots[t + 1]);
        let (v0, v1) = (self.values[t], self.values[t + 1]);
        let slope = (v1 - v0) / (x1 - x0);
        (slope, v0 - slope * x0)
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        let len = v.norm();
        if len > 1e-6 {
            return v / len;
        }
    }
}

fn random_rotation<R: Rng>(max_deg: f64, rng: &mut R) -> Matrix3<f64> {
    let angle = if max_deg > 0.0 { rng.random_range(0.0..=max_deg).to_radians() } else { 0.0 };
    Rotation3::from_axis_angle(&Unit::new_unchecked(random_unit(rng)), angle).into_inner()
}

/// Target translation magnitudes: the first patch at 1, the last at
/// `max_ratio`, the rest uniform in between.
fn ratio_targets<R: Rng>(n: usize, max_ratio: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == 0 || max_ratio == 1.0 {
                1.0
            } else if i == n - 1 {
                max_ratio
            } else {
                rng.random_range(1.0..=max_ratio)
            }
        })
        .collect()
}

/// Rotation about `anchor` composed with `(rg, tg)` whose net translation has
/// magnitude `target`; `None` if no angle up to 90 degrees reaches it.
fn pivot_motion(
    anchor: &Vector3<f64>,
    rg: &Matrix3<f64>,
    tg: &Vector3<f64>,
    target: f64,
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let u = rg.transpose() * tg.normalize();
    let mut axis = u.cross(anchor);
    if axis.norm() < 1e-9 * anchor.norm() {
        axis = anchor.cross(&Vector3::x());
        if axis.norm() < 1e-9 * anchor.norm() {
            axis = anchor.cross(&Vector3::y());
        }
    }
    let axis = Unit::new_normalize(axis);
    let motion = |theta: f64| {
        let rs = Rotation3::from_axis_angle(&axis, theta).into_inner();
        let r = rg * rs;
        (r, rg * anchor + tg - r * anchor)
    };
    let tau = |theta: f64| motion(theta).1.norm();
    if (tau(0.0) - target).abs() <= 1e-14 * target {
        return Some(motion(0.0));
    }
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
    if tau(hi) < target {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tau(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = motion(0.5 * (lo + hi));
    ((m.1.norm() - target).abs() <= 1e-9 * target).then_some(m)
}

/// Largest change of an inter-anchor distance under the per-patch motions.
pub fn anchor_distance_residual(anchors: &[Vector3<f64>], motions: &[(Matrix3<f64>, Vector3<f64>)]) -> f64 {
    let moved: Vec<Vector3<f64>> = anchors
        .iter()
        .zip(motions)
        .map(|(a, (r, t))| r * a + t)
        .collect();
    let mut worst = 0.0f64;
    for i in 0..anchors.len() {
        for k in i + 1..anchors.len() {
            let before = (anchors[i] - anchors[k]).norm();
            let after = (moved[i] - moved[k]).norm();
            worst = worst.max((before - after).abs());
        }
    }
    worst
}

pub fn gen_scene(spec: &SceneSpec) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    let k = spec.intrinsics()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (cols, rows) = grid_shape(w, h, spec.n_patches);
    let labels = crate::segmentation::grid_labels(w, h, cols, rows);
    let part = SuperpixelPartition::from_labels(w, h, labels.clone())
        .map_err(|e| SynthError::InfeasibleSpec(e.to_string()))?;
    let n = part.count;

    let fx = Profile::new(w, cols, k.cx, k.fx, spec.inverse_depth, &mut rng);
    let fy = Profile::new(h, rows, k.cy, k.fy, spec.inverse_depth, &mut rng);
    // plane (p, q, r) . X = 1 from rho = p x + q y + r
    let planes: Vec<(Vector3<f64>, f64)> = (0..n)
        .map(|i| {
            let (a, b) = fx.segment(i % cols);
            let (c, d) = fy.segment(i / cols);
            let m = Vector3::new(a, c, b + d);
            (m.normalize(), 1.0 / m.norm())
        })
        .collect();
    let anchors: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let a = part.anchors[i];
            let ray = k.ray(a.x as f64, a.y as f64);
            ray * (planes[i].1 / planes[i].0.dot(&ray))
        })
        .collect();

    let rg = random_rotation(spec.rotation_deg, &mut rng);
    let tg = random_unit(&mut rng) * spec.translation;
    let motions: Vec<(Matrix3<f64>, Vector3<f64>)> = match spec.family {
        MotionFamily::Rigid => vec![(rg, tg); n],
        MotionFamily::Articulated => {
            let targets = ratio_targets(n, spec.max_scale_ratio, &mut rng);
            anchors
                .iter()
                .zip(&targets)
                .map(|(a, &r)| {
                    pivot_motion(a, &rg, &tg, r * spec.translation).ok_or_else(|| {
                        SynthError::InfeasibleSpec(format!(
                            "no pivot rotation reaches translation ratio {r}"
                        ))
                    })
                })
                .collect::<Result<_, _>>()?
        }
        MotionFamily::Independent => {
            let targets = ratio_targets(n, spec.max_scale_ratio, &mut rng);
            targets
                .iter()
                .map(|&r| {
                    (
                        random_rotation(spec.rotation_deg, &mut rng),
                        random_unit(&mut rng) * (r * spec.translation),
                    )
                })
                .collect()
        }
    };
    let arap_residual = anchor_distance_residual(&anchors, &motions);
    if spec.family == MotionFamily::Articulated && arap_residual > spec.max_arap_residual {
        return Err(SynthError::InfeasibleSpec(format!(
            "anchor distances drift by {arap_residual:e} > {:e}",
            spec.max_arap_residual
        )));
    }

    let taus: Vec<f64> = motions.iter().map(|(_, t)| t.norm()).collect();
    let scale: f64 = taus.iter().sum();
    let patches: Vec<TruePatch> = (0..n)
        .map(|i| TruePatch {
            hypothesis: Hypothesis {
                plane: Plane {
                    normal: planes[i].0,
                    d: planes[i].1 / taus[i],
                },
                motion: Motion {
                    rotation: motions[i].0,
                    t_hat: motions[i].1 / taus[i],
                },
            },
            lambda: taus[i] / scale,
        })
        .collect();
    let truth = SceneTruth {
        spec: spec.clone(),
        scale,
        patches,
        arap_residual,
    };
    let moving = truth.moving_planes();

    let flow_exact: Vec<Option<[f64; 2]>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let p = &moving[labels[i] as usize];
            let x1 = p.lift(&k.ray(x, y))?;
            let x2 = p.rotation * x1 + p.translation;
            if x2.z <= 0.0 {
                return None;
            }
            let q = k.project(&x2);
            Some([q.x - x, q.y - y])
        })
        .collect();
    if flow_exact.iter().any(Option::is_none) {
        return Err(SynthError::InfeasibleSpec("a surface point moves behind the second camera".into()));
    }
    let flow_exact: Vec<[f64; 2]> = flow_exact.into_iter().flatten().collect();
    let clean = DenseFlow::new(
        w,
        h,
        flow_exact.iter().map(|f| f[0] as f32).collect(),
        flow_exact.iter().map(|f| f[1] as f32).collect(),
    )?;
    let flow = corrupt_flow(&clean, spec.flow_noise, spec.outlier_frac, spec.seed ^ 0x5eed_f10e);

    let depth1 = depth_frame1(&k, &labels, &moving);
    let (depth2, owner) = depth_frame2(&k, &labels, &moving);

    let colors: Vec<[f32; 3]> = (0..n)
        .map(|_| [0; 3].map(|_: i32| 0.5 + rng.random_range(-0.15f32..=0.15)))
        .collect();
    let ref_image = ImageRGB::new(w, h, labels.iter().map(|&l| colors[l as usize]).collect())?;
    let next_image = ImageRGB::new(
        w,
        h,
        owner
            .iter()
            .map(|o| o.map_or([0.0; 3], |l| colors[l as usize]))
            .collect(),
    )?;
    Ok(SyntheticScene {
        intrinsics: k,
        truth,
        labels,
        flow_exact,
        flow,
        depth1,
        depth2,
        ref_image,
        next_image,
    })
}

/// Adds i.i.d. Gaussian noise of `sigma` pixels to every valid vector and
/// replaces a fraction `outlier_frac` of them by uniform random vectors.
pub fn corrupt_flow(flow: &DenseFlow, sigma: f64, outlier_frac: f64, seed: u64) -> DenseFlow {
    assert!(sigma >= 0.0 && (0.0..1.0).contains(&outlier_frac));
    let mut out = flow.clone();
    if sigma == 0.0 && outlier_frac == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    for i in 0..out.u.len() {
        if !out.valid[i] {
            continue;
        }
        if outlier_frac > 0.0 && rng.random::<f64>() < outlier_frac {
            out.u[i] = rng.random_range(-OUTLIER_RANGE..=OUTLIER_RANGE) as f32;
            out.v[i] = rng.random_range(-OUTLIER_RANGE..=OUTLIER_RANGE) as f32;
        } else if sigma > 0.0 {
            out.u[i] = (out.u[i] as f64 + noise.sample(&mut rng)) as f32;
            out.v[i] = (out.v[i] as f64 + noise.sample(&mut rng)) as f32;
        }
    }
    out
}

/// A scene bundle as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub ref_image: ImageRGB,
    pub next_image: ImageRGB,
    pub flow: DenseFlow,
    pub intrinsics: Intrinsics,
    pub gt_depth1: DepthMap,
    pub gt_depth2: DepthMap,
    pub labels: Vec<u32>,
    pub truth: SceneTruth,
}

pub mod files {
    pub const REF: &str = "ref.png";
    pub const NEXT: &str = "next.png";
    pub const FLOW: &str = "flow.flo";
    pub const DEPTH1: &str = "gt_depth1.pfm";
    pub const DEPTH2: &str = "gt_depth2.pfm";
    pub const SCENE: &str = "scene.json";
    pub const INTRINSICS: &str = "intrinsics.json";
    pub const LABELS: &str = "labels.png";
}

pub fn write_bundle(scene: &SyntheticScene, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::IoFailure {
        path: dir.to_path_buf(),
        source,
    })?;
    let k = &scene.intrinsics;
    save_image_rgb(&scene.ref_image, &dir.join(files::REF))?;
    save_image_rgb(&scene.next_image, &dir.join(files::NEXT))?;
    save_flow(&scene.flow, &dir.join(files::FLOW))?;
    save_depth_pfm(&scene.depth1, &dir.join(files::DEPTH1))?;
    save_depth_pfm(&scene.depth2, &dir.join(files::DEPTH2))?;
    save_json(&dir.join(files::SCENE), &scene.truth)?;
    save_intrinsics(k, &dir.join(files::INTRINSICS))?;
    save_label_png(k.width, k.height, &scene.labels, &dir.join(files::LABELS))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<SceneBundle, SynthError> {
    let (lw, lh, labels) = load_label_png(&dir.join(files::LABELS))?;
    let intrinsics = load_intrinsics(&dir.join(files::INTRINSICS))?;
    if (lw, lh) != (intrinsics.width, intrinsics.height) {
        return Err(IoError::LengthMismatch {
            width: intrinsics.width,
            height: intrinsics.height,
            actual: lw * lh,
        }
        .into());
    }
    Ok(SceneBundle {
        ref_image: load_image_rgb(&dir.join(files::REF))?,
        next_image: load_image_rgb(&dir.join(files::NEXT))?,
        flow: load_flow(&dir.join(files::FLOW))?,
        intrinsics,
        gt_depth1: load_depth_pfm(&dir.join(files::DEPTH1))?,
        gt_depth2: load_depth_pfm(&dir.join(files::DEPTH2))?,
        labels,
        truth: load_json(&dir.join(files::SCENE))?,
    })
}
