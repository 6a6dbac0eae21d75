use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Correspondence, SfmError};

/// Plane-induced image-to-image map, scaled to unit Frobenius norm with a
/// non-negative trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub h: Matrix3<f64>,
}

impl Homography {
    /// Normalizes `h`; fails when it is (numerically) singular.
    pub fn new(h: Matrix3<f64>) -> Result<Self, SfmError> {
        let norm = h.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(SfmError::DegenerateConfiguration("zero homography"));
        }
        let mut h = h / norm;
        if h.trace() < 0.0 {
            h = -h;
        }
        if h.determinant().abs() < 1e-14 {
            return Err(SfmError::DegenerateConfiguration("singular homography"));
        }
        Ok(Self { h })
    }

    /// Maps a reference pixel; `None` if it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, p: &Point2<f64>) -> Option<Point2<f64>> {
        map_point(&self.h, p)
    }

    pub fn inverse(&self) -> Option<Self> {
        self.h.try_inverse().and_then(|h| Self::new(h).ok())
    }

    /// `sqrt((|Hp - q|^2 + |H^-1 q - p|^2) / 2)`, infinite when undefined.
    pub fn symmetric_transfer_error(&self, c: &Correspondence) -> f64 {
        let Some(inv) = self.h.try_inverse() else {
            return f64::INFINITY;
        };
        symmetric_error(&self.h, &inv, c)
    }
}

#[inline]
pub(crate) fn map_point(h: &Matrix3<f64>, p: &Point2<f64>) -> Option<Point2<f64>> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < 1e-300 {
        return None;
    }
    Some(Point2::new(v.x / v.z, v.y / v.z))
}

fn symmetric_error(h: &Matrix3<f64>, inv: &Matrix3<f64>, c: &Correspondence) -> f64 {
    match (map_point(h, &c.p), map_point(inv, &c.q)) {
        (Some(fw), Some(bw)) => {
            (((fw - c.q).norm_squared() + (bw - c.p).norm_squared()) / 2.0).sqrt()
        }
        _ => f64::INFINITY,
    }
}

/// Similarity moving the centroid to the origin with mean distance `sqrt(2)`.
pub(crate) fn hartley_normalization(points: &[Point2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-300 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Ratio of the smaller to the larger principal spread; 0 for collinear sets.
pub(crate) fn spread_ratio(points: &[Point2<f64>]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    let tr = cxx + cyy;
    if tr <= 0.0 {
        return 0.0;
    }
    let disc = ((cxx - cyy).powi(2) + 4.0 * cxy * cxy).sqrt();
    let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
    (lo.max(0.0) / hi).sqrt()
}

/// Right singular vector of the smallest singular value of `a` (`rows >= 1`, 9 columns).
pub(crate) fn null_vector9(a: DMatrix<f64>) -> [f64; 9] {
    let a = if a.nrows() < 9 {
        let mut padded = DMatrix::zeros(9, 9);
        padded.view_mut((0, 0), (a.nrows(), 9)).copy_from(&a);
        padded
    } else {
        a
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .unwrap();
    let mut out = [0.0; 9];
    for (j, o) in out.iter_mut().enumerate() {
        *o = v_t[(idx, j)];
    }
    out
}

/// Normalized-DLT least-squares homography through all correspondences.
pub fn fit_homography(corrs: &[Correspondence]) -> Result<Homography, SfmError> {
    if corrs.len() < 4 {
        return Err(SfmError::DegenerateConfiguration("fewer than 4 correspondences"));
    }
    let src: Vec<Point2<f64>> = corrs.iter().map(|c| c.p).collect();
    let dst: Vec<Point2<f64>> = corrs.iter().map(|c| c.q).collect();
    if spread_ratio(&src) < 1e-6 || spread_ratio(&dst) < 1e-6 {
        return Err(SfmError::DegenerateConfiguration("collinear correspondences"));
    }
    let t1 = hartley_normalization(&src);
    let t2 = hartley_normalization(&dst);
    let mut a = DMatrix::zeros(2 * corrs.len(), 9);
    for (i, c) in corrs.iter().enumerate() {
        let p = t1 * Vector3::new(c.p.x, c.p.y, 1.0);
        let q = t2 * Vector3::new(c.q.x, c.q.y, 1.0);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let h = null_vector9(a);
    let hn = Matrix3::from_row_slice(&h);
    let t2_inv = t2
        .try_inverse()
        .ok_or(SfmError::DegenerateConfiguration("normalization not invertible"))?;
    Homography::new(t2_inv * hn * t1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacOptions {
    pub iterations: usize,
    /// Inlier threshold in pixels.
    pub threshold: f64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            threshold: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustHomography {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

/// RANSAC over 4-point DLT candidates scored by symmetric transfer error,
/// then a least-squares refit on the consensus set.
pub fn fit_homography_ransac<R: Rng>(
    corrs: &[Correspondence],
    opts: &RansacOptions,
    rng: &mut R,
) -> Result<RobustHomography, SfmError> {
    if corrs.len() < 4 {
        return Err(SfmError::DegenerateConfiguration("fewer than 4 correspondences"));
    }
    let score = |h: &Homography| -> (Vec<bool>, usize, f64) {
        let inv = h.h.try_inverse().unwrap_or_else(Matrix3::zeros);
        let mut mask = vec![false; corrs.len()];
        let (mut count, mut err) = (0usize, 0.0);
        for (m, c) in mask.iter_mut().zip(corrs) {
            let e = symmetric_error(&h.h, &inv, c);
            if e < opts.threshold {
                *m = true;
                count += 1;
                err += e;
            }
        }
        (mask, count, err)
    };

    let mut best: Option<(Homography, Vec<bool>, usize, f64)> = None;
    let consider = |cand: Homography,
                    best: &mut Option<(Homography, Vec<bool>, usize, f64)>| {
        let (mask, count, err) = score(&cand);
        let better = match best {
            None => true,
            Some((_, _, bc, be)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            *best = Some((cand, mask, count, err));
        }
    };

    if let Ok(h) = fit_homography(corrs) {
        consider(h, &mut best);
    }
    if corrs.len() > 4 {
        for _ in 0..opts.iterations {
            let idx = sample(rng, corrs.len(), 4);
            let minimal: Vec<Correspondence> = idx.iter().map(|i| corrs[i]).collect();
            if let Ok(h) = fit_homography(&minimal) {
                consider(h, &mut best);
            }
            if best.as_ref().is_some_and(|b| b.2 == corrs.len()) {
                break;
            }
        }
    }
    let (mut h, mut mask, mut count, _) =
        best.ok_or(SfmError::DegenerateConfiguration("no homography hypothesis"))?;
    // refit on the consensus set until it stops growing
    for _ in 0..3 {
        let inl: Vec<Correspondence> = corrs
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| *c)
            .collect();
        let Ok(refit) = fit_homography(&inl) else { break };
        let (m2, c2, _) = score(&refit);
        if c2 < count {
            break;
        }
        let grew = c2 > count;
        h = refit;
        mask = m2;
        count = c2;
        if !grew {
            break;
        }
    }
    Ok(RobustHomography {
        homography: h,
        inliers: mask,
        inlier_count: count,
    })
}

/// One physically plausible reading of a calibrated homography
/// `G ~ R + t_hat n^T / d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyDecomposition {
    pub rotation: Matrix3<f64>,
    pub t_hat: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub d: f64,
}

/// Splits a calibrated homography `G = K^-1 H K` into rotation, translation
/// direction, and plane, keeping the solutions that put every reference ray
/// in front of the plane. Typically two survive.
pub fn decompose_homography(
    g: &Matrix3<f64>,
    reference_rays: &[Vector3<f64>],
) -> Result<Vec<HomographyDecomposition>, SfmError> {
    let sv = g.svd(false, false).singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[1] <= 0.0 {
        return Err(SfmError::NumericallySingular);
    }
    let mut h = g / sorted[1];
    // positive depth: reference rays must map in front of the second camera
    let ahead = reference_rays.iter().filter(|r| (h * *r).z > 0.0).count();
    if 2 * ahead < reference_rays.len() {
        h = -h;
    }

    let hth = h.transpose() * h;
    let eig = hth.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s1 = eig.eigenvalues[order[0]];
    let s3 = eig.eigenvalues[order[2]];
    if (s1 - s3).abs() < 1e-10 {
        return Err(SfmError::NumericallySingular);
    }
    let v1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let mut v2: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    let v3: Vector3<f64> = eig.eigenvectors.column(order[2]).into();
    if v1.cross(&v2).dot(&v3) < 0.0 {
        v2 = -v2;
    }
    let a = (1.0 - s3).max(0.0).sqrt();
    let b = (s1 - 1.0).max(0.0).sqrt();
    let c = (s1 - s3).sqrt();
    let u1 = (v1 * a + v3 * b) / c;
    let u2 = (v1 * a - v3 * b) / c;

    let mut out = Vec::with_capacity(2);
    for u in [u1, u2] {
        let big_u = Matrix3::from_columns(&[v2, u, v2.cross(&u)]);
        let hv2 = h * v2;
        let hu = h * u;
        let big_w = Matrix3::from_columns(&[hv2, hu, hv2.cross(&hu)]);
        let r = big_w * big_u.transpose();
        let n = v2.cross(&u);
        let t = (h - r) * n;
        for sign in [1.0, -1.0] {
            let (n, t) = (n * sign, t * sign);
            let t_norm = t.norm();
            if t_norm < 1e-12 {
                continue;
            }
            if reference_rays.iter().all(|ray| n.dot(ray) > 0.0) {
                out.push(HomographyDecomposition {
                    rotation: r,
                    t_hat: t / t_norm,
                    normal: n.normalize(),
                    d: 1.0 / t_norm,
                });
            }
        }
    }
    Ok(out)
}
