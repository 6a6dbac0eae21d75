/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Uniform starting scales `1 / N`, with the last entry nudged by a few ulps
/// where needed so the compensated sum is exactly one.
pub fn init_scales(n: usize) -> Vec<f64> {
    assert!(n >= 1, "at least one superpixel");
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..64 {
        let s = compensated_sum(&v);
        if s == 1.0 {
            break;
        }
        let last = v[n - 1];
        v[n - 1] = if s < 1.0 { last.next_up() } else { last.next_down() };
    }
    v
}

/// Whether `x` already lies on the floored simplex, up to rounding.
pub(crate) fn is_feasible(x: &[f64], floor: f64) -> bool {
    let tol = 4.0 * f64::EPSILON * x.len() as f64;
    x.iter().all(|&v| v >= floor && v.is_finite()) && (compensated_sum(x) - 1.0).abs() <= tol
}

/// Euclidean projection onto `{x : sum x = 1, x_i >= floor}`.
pub fn project_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let n = v.len();
    assert!(n >= 1);
    let floor = floor.clamp(0.0, 1.0 / n as f64);
    let budget = 1.0 - n as f64 * floor;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - budget) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    shifted.iter().map(|x| (x - theta).max(0.0) + floor).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init() {
        assert_eq!(init_scales(4), vec![0.25; 4]);
        let v = init_scales(49);
        assert!(v.iter().all(|&x| (x - 1.0 / 49.0).abs() < 1e-16));
        assert_eq!(init_scales(1), vec![1.0]);
        for n in 1..200 {
            assert_eq!(compensated_sum(&init_scales(n)), 1.0, "N = {n}");
        }
    }

    #[test]
    fn feasible_points_are_fixed() {
        assert_eq!(project_simplex(&[0.25; 4], 0.0), vec![0.25; 4]);
        assert_eq!(project_simplex(&[0.8, 0.8], 0.0), vec![0.5, 0.5]);
    }

    /// KKT oracle: bisection on the multiplier of the sum constraint.
    fn bisect_projection(v: &[f64], floor: f64) -> Vec<f64> {
        let f = |t: f64| v.iter().map(|x| (x - t).max(floor)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        v.iter().map(|x| (x - t).max(floor)).collect()
    }

    #[test]
    fn matches_kkt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.5)).collect();
            let floor = if rng.random_bool(0.5) { 0.0 } else { 1e-3 };
            let got = project_simplex(&v, floor);
            let want = bisect_projection(&v, floor);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
            }
            assert!((compensated_sum(&got) - 1.0).abs() < 1e-12);
            assert!(got.iter().all(|&x| x >= floor));
            let again = project_simplex(&got, floor);
            for (a, b) in got.iter().zip(&again) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
