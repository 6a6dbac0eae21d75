use nalgebra::{DMatrix, Matrix3, Matrix4, Point2, Vector3, Vector4};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::homography::{
    fit_homography_ransac, hartley_normalization, null_vector9, spread_ratio, RansacOptions,
};
use super::{Correspondence, SfmError};
use crate::camera::Intrinsics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionOptions {
    pub ransac: RansacOptions,
    /// Fraction of correspondences a single homography (or rotation) must
    /// explain for the set to count as planar (or parallax-free).
    pub degenerate_fraction: f64,
    pub irls_iterations: usize,
    pub seed: u64,
}

impl Default for MotionOptions {
    fn default() -> Self {
        Self {
            ransac: RansacOptions::default(),
            degenerate_fraction: 0.95,
            irls_iterations: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionEstimate {
    pub rotation: Matrix3<f64>,
    pub t_hat: Vector3<f64>,
    pub essential: Matrix3<f64>,
    /// Epipolar inliers among the correspondences actually used.
    pub inliers: Vec<bool>,
    /// Share of inliers triangulating in front of both cameras.
    pub positive_depth_fraction: f64,
    /// Whether `neighbor_corrs` had to be pulled in.
    pub used_neighbors: bool,
}

/// Skew-symmetric cross-product matrix.
#[inline]
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Rotation nearest (Frobenius) to `m`.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let det = (u * v_t).determinant();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum())) * v_t
}

/// Projects onto the essential manifold: singular values `(s, s, 0)`.
pub fn enforce_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut idx = [0usize, 1, 2];
    let sv = svd.singular_values;
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let s = (sv[idx[0]] + sv[idx[1]]) / 2.0;
    let mut d = Vector3::zeros();
    d[idx[0]] = s;
    d[idx[1]] = s;
    u * Matrix3::from_diagonal(&d) * v_t
}

/// Weighted normalized 8-point estimate of `E` with `x2^T E x1 = 0` over
/// calibrated image points.
fn eight_point(x1: &[Point2<f64>], x2: &[Point2<f64>], weights: Option<&[f64]>) -> Matrix3<f64> {
    let t1 = hartley_normalization(x1);
    let t2 = hartley_normalization(x2);
    let mut a = DMatrix::zeros(x1.len(), 9);
    for i in 0..x1.len() {
        let p = t1 * Vector3::new(x1[i].x, x1[i].y, 1.0);
        let q = t2 * Vector3::new(x2[i].x, x2[i].y, 1.0);
        let w = weights.map_or(1.0, |w| w[i]);
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = w * q[r] * p[c];
            }
        }
    }
    let f = Matrix3::from_row_slice(&null_vector9(a));
    let e = t2.transpose() * f * t1;
    let e = enforce_essential(&e);
    e / e.norm()
}

/// First-order geometric (Sampson) distance of a pixel correspondence to `F`.
#[inline]
pub fn sampson_distance(f: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let p = Vector3::new(c.p.x, c.p.y, 1.0);
    let q = Vector3::new(c.q.x, c.q.y, 1.0);
    let fp = f * p;
    let ftq = f.transpose() * q;
    let e = q.dot(&fp);
    let denom = fp.x * fp.x + fp.y * fp.y + ftq.x * ftq.x + ftq.y * ftq.y;
    if denom <= 1e-300 {
        return if e.abs() <= 1e-300 { 0.0 } else { f64::INFINITY };
    }
    (e * e / denom).sqrt()
}

/// Fundamental matrix `K^-T E K^-1`.
pub fn fundamental_from_essential(e: &Matrix3<f64>, k: &Intrinsics) -> Matrix3<f64> {
    let ki = k.inverse_matrix();
    ki.transpose() * e * ki
}

/// The four `(R, t)` factorizations of an essential matrix.
pub fn decompose_essential(e: &Matrix3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = e.svd(true, true);
    let sv = svd.singular_values;
    let (mut u, mut v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // reorder so the null direction comes last
    let null = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
    if null != 2 {
        u.swap_columns(null, 2);
        v_t.swap_rows(null, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Linear triangulation for cameras `[I | 0]` and `[R | t]` on calibrated points.
/// Returns the point in the first camera frame.
pub fn triangulate(
    x1: &Point2<f64>,
    x2: &Point2<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let p2 = |row: usize| Vector4::new(r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]);
    let p1 = |row: usize| {
        let mut v = Vector4::zeros();
        v[row] = 1.0;
        v
    };
    let rows = [
        p1(2) * x1.x - p1(0),
        p1(2) * x1.y - p1(1),
        p2(2) * x2.x - p2(0),
        p2(2) * x2.y - p2(1),
    ];
    let a = Matrix4::from_rows(&[
        rows[0].transpose(),
        rows[1].transpose(),
        rows[2].transpose(),
        rows[3].transpose(),
    ]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let idx = (0..4)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap();
    let x = v_t.row(idx);
    if x[3].abs() < 1e-300 {
        return None;
    }
    Some(Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]))
}

/// Number of correspondences placed in front of both cameras by `(R, t)`.
pub fn cheirality_count(
    x1: &[Point2<f64>],
    x2: &[Point2<f64>],
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> usize {
    x1.iter()
        .zip(x2)
        .filter(|(a, b)| {
            triangulate(a, b, r, t).is_some_and(|x| x.z > 0.0 && (r * x + t).z > 0.0)
        })
        .count()
}

/// Least-squares rotation aligning reference bearings to next-frame bearings.
pub fn fit_rotation(x1: &[Point2<f64>], x2: &[Point2<f64>]) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (a, b) in x1.iter().zip(x2) {
        let a = Vector3::new(a.x, a.y, 1.0).normalize();
        let b = Vector3::new(b.x, b.y, 1.0).normalize();
        m += b * a.transpose();
    }
    nearest_rotation(&m)
}

fn calibrate(c: &[Correspondence], k: &Intrinsics) -> (Vec<Point2<f64>>, Vec<Point2<f64>>) {
    let cal = |p: &Point2<f64>| {
        let r = k.ray(p.x, p.y);
        Point2::new(r.x, r.y)
    };
    (c.iter().map(|c| cal(&c.p)).collect(), c.iter().map(|c| cal(&c.q)).collect())
}

fn rotation_explains(
    r: &Matrix3<f64>,
    corrs: &[Correspondence],
    k: &Intrinsics,
    threshold: f64,
) -> usize {
    corrs
        .iter()
        .filter(|c| {
            let x = r * k.ray(c.p.x, c.p.y);
            x.z > 0.0 && (k.project(&x) - c.q).norm() < threshold
        })
        .count()
}

/// Rigid motion `(R, t_hat)` of one superpixel from its flow correspondences.
///
/// Planar sets (all explained by one homography) are augmented with
/// `neighbor_corrs` before the essential matrix is fit, since a single plane
/// does not determine it.
pub fn estimate_motion(
    corrs: &[Correspondence],
    k: &Intrinsics,
    neighbor_corrs: &[Correspondence],
) -> Result<MotionEstimate, SfmError> {
    estimate_motion_with(corrs, k, neighbor_corrs, &MotionOptions::default())
}

pub fn estimate_motion_with(
    corrs: &[Correspondence],
    k: &Intrinsics,
    neighbor_corrs: &[Correspondence],
    opts: &MotionOptions,
) -> Result<MotionEstimate, SfmError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let explains = |count: usize, total: usize| count as f64 >= opts.degenerate_fraction * total as f64;

    let planar = |set: &[Correspondence], rng: &mut rand_chacha::ChaCha8Rng| {
        set.len() >= 4
            && fit_homography_ransac(set, &opts.ransac, rng)
                .map(|h| explains(h.inlier_count, set.len()))
                // a collinear set cannot constrain E either
                .unwrap_or(true)
    };

    let mut used_neighbors = false;
    let mut work: Vec<Correspondence> = corrs.to_vec();
    if work.len() < 8 || planar(&work, &mut rng) {
        work.extend_from_slice(neighbor_corrs);
        used_neighbors = !neighbor_corrs.is_empty();
    }
    if work.len() < 8 {
        return Err(SfmError::InsufficientCorrespondences {
            found: work.len(),
            needed: 8,
        });
    }

    let (x1, x2) = calibrate(&work, k);
    let rotation = fit_rotation(&x1, &x2);
    if explains(rotation_explains(&rotation, &work, k, opts.ransac.threshold), work.len()) {
        return Err(SfmError::InsufficientParallax { rotation });
    }
    if planar(&work, &mut rng) {
        return Err(SfmError::PlanarDegenerate);
    }
    if spread_ratio(&x1) < 1e-6 {
        return Err(SfmError::DegenerateConfiguration("collinear correspondences"));
    }

    let n = work.len();
    let score = |e: &Matrix3<f64>| -> (Vec<bool>, usize, f64) {
        let f = fundamental_from_essential(e, k);
        let mut mask = vec![false; n];
        let (mut count, mut err) = (0, 0.0);
        for (m, c) in mask.iter_mut().zip(&work) {
            let s = sampson_distance(&f, c);
            if s < opts.ransac.threshold {
                *m = true;
                count += 1;
                err += s;
            }
        }
        (mask, count, err)
    };

    let mut best_e = eight_point(&x1, &x2, None);
    let (mut mask, mut count, mut err) = score(&best_e);
    if count < n {
        for _ in 0..opts.ransac.iterations {
            let idx = sample(&mut rng, n, 8);
            let s1: Vec<Point2<f64>> = idx.iter().map(|i| x1[i]).collect();
            let s2: Vec<Point2<f64>> = idx.iter().map(|i| x2[i]).collect();
            let e = eight_point(&s1, &s2, None);
            if !e.iter().all(|v| v.is_finite()) {
                continue;
            }
            let (m, c, er) = score(&e);
            if c > count || (c == count && er < err) {
                best_e = e;
                mask = m;
                count = c;
                err = er;
            }
            if count == n {
                break;
            }
        }
    }
    if count < 8 {
        return Err(SfmError::InsufficientCorrespondences {
            found: count,
            needed: 8,
        });
    }

    // Sampson-weighted refinement on the consensus set
    let in1: Vec<Point2<f64>> = x1.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let in2: Vec<Point2<f64>> = x2.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let mut e = eight_point(&in1, &in2, None);
    for _ in 0..opts.irls_iterations {
        let weights: Vec<f64> = in1
            .iter()
            .zip(&in2)
            .map(|(a, b)| {
                let p = Vector3::new(a.x, a.y, 1.0);
                let q = Vector3::new(b.x, b.y, 1.0);
                let ep = e * p;
                let etq = e.transpose() * q;
                let g = (ep.x * ep.x + ep.y * ep.y + etq.x * etq.x + etq.y * etq.y).sqrt();
                1.0 / g.max(1e-12)
            })
            .collect();
        let next = eight_point(&in1, &in2, Some(&weights));
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        e = next;
    }
    let (m2, c2, _) = score(&e);
    if c2 >= count {
        best_e = e;
        mask = m2;
        count = c2;
    }
    let in1: Vec<Point2<f64>> = x1.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let in2: Vec<Point2<f64>> = x2.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();

    let candidates = decompose_essential(&best_e);
    let mut counts: Vec<(usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, (r, t))| (cheirality_count(&in1, &in2, r, t), i))
        .collect();
    counts.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    if counts[0].0 == counts[1].0 {
        return Err(SfmError::InsufficientParallax { rotation });
    }
    let (r, t) = candidates[counts[0].1];
    Ok(MotionEstimate {
        rotation: r,
        t_hat: t.normalize(),
        essential: best_e,
        inliers: mask,
        positive_depth_fraction: counts[0].0 as f64 / count as f64,
        used_neighbors,
    })
}
