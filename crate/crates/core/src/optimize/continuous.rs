use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::simplex::{is_feasible, project_simplex};
use super::OptimizeError;
use crate::energy::ScaleObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousMethod {
    /// Damped Newton steps on a curvature model that reweights the kinked
    /// terms, falling back to a projected-gradient step whenever the model
    /// step does not descend.
    Newton,
    ProjectedGradient,
    LogBarrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuousConfig {
    pub method: ContinuousMethod,
    pub max_iters: usize,
    /// Stop once the projected gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step lowers the energy by less than this, relatively.
    pub rel_tol: f64,
    /// Lower bound on every scale; `None` means `1e-6 / N`.
    pub epsilon: Option<f64>,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self {
            method: ContinuousMethod::Newton,
            max_iters: 500,
            grad_tol: 1e-9,
            rel_tol: 1e-10,
            epsilon: None,
            armijo: 1e-4,
            max_halvings: 60,
        }
    }
}

impl ContinuousConfig {
    pub fn floor(&self, n: usize) -> f64 {
        self.epsilon.unwrap_or(1e-6 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AlreadyOptimal,
    GradientTolerance,
    RelativeDecrease,
    LineSearchExhausted,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSolution {
    pub lambda: Vec<f64>,
    pub energy: f64,
    pub initial_energy: f64,
    pub iterations: usize,
    /// Projected gradient norm at the returned point.
    pub grad_norm: f64,
    pub stop: StopReason,
    /// Energy at the start and after every accepted step.
    pub energies: Vec<f64>,
}

/// Norm of the projected gradient: the feasible-direction part of `g`.
fn projected_grad_norm(x: &[f64], g: &[f64], floor: f64) -> f64 {
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax == 0.0 {
        return 0.0;
    }
    let s = 1e-6 / (x.len() as f64 * (1.0 + gmax));
    let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - s * b).collect();
    let p = project_simplex(&y, floor);
    x.iter()
        .zip(&p)
        .map(|(a, b)| ((a - b) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_grad(g: &[f64]) -> Result<(), OptimizeError> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OptimizeError::NonFiniteEnergy("gradient"))
    }
}

/// Minimizes the total energy over the floored simplex, starting from `init`.
///
/// The returned energy never exceeds the energy at (the projection of) `init`.
pub fn solve_scales(
    obj: &ScaleObjective,
    init: &[f64],
    cfg: &ContinuousConfig,
) -> Result<ScaleSolution, OptimizeError> {
    match cfg.method {
        ContinuousMethod::Newton => newton(obj, init, cfg),
        ContinuousMethod::ProjectedGradient => projected_gradient(obj, init, cfg),
        ContinuousMethod::LogBarrier => log_barrier(obj, init, cfg),
    }
}


/// One Armijo line search along the projected negative gradient. Returns the
/// new point, its energy and the accepted step length.
fn gradient_step(
    obj: &ScaleObjective,
    x: &[f64],
    fx: f64,
    g: &[f64],
    step: f64,
    cfg: &ContinuousConfig,
    floor: f64,
) -> Option<(Vec<f64>, f64, f64)> {
    let mut s = step;
    for _ in 0..cfg.max_halvings {
        let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - s * b).collect();
        let y = project_simplex(&y, floor);
        let dec: f64 = g.iter().zip(y.iter().zip(x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
        if dec >= 0.0 {
            // the projected step no longer moves downhill
            return None;
        }
        let fy = obj.value(&y);
        if fy.is_finite() && fy <= fx + cfg.armijo * dec {
            return Some((y, fy, s));
        }
        s *= 0.5;
    }
    None
}

/// Newton step `d` minimizing `g^T d + 0.5 d^T H d` over `sum d = 0`, with
/// scales already at the floor and pushed further down held fixed.
fn newton_step(blocks: &[(usize, usize, [f64; 3])], g: &[f64], x: &[f64], floor: f64) -> Option<Vec<f64>> {
    let n = x.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for &(i, k, b) in blocks {
        h[(i, i)] += b[0];
        h[(i, k)] += b[1];
        h[(k, i)] += b[1];
        h[(k, k)] += b[2];
    }
    let scale = h.diagonal().iter().sum::<f64>() / n as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    for i in 0..n {
        h[(i, i)] += 1e-9 * scale;
    }
    let at_floor = |i: usize| x[i] <= floor * (1.0 + 1e-12);
    let mut pinned = vec![false; n];
    for _ in 0..n {
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        if free.len() < 2 {
            return None;
        }
        let m = free.len();
        let hff = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
        let chol = hff.cholesky()?;
        let z1 = chol.solve(&DVector::from_element(m, 1.0));
        let zg = chol.solve(&DVector::from_fn(m, |a, _| g[free[a]]));
        let nu = -zg.sum() / z1.sum();
        let d = -(zg + z1 * nu);
        let blocked: Vec<usize> = (0..m).filter(|&a| d[a] < 0.0 && at_floor(free[a])).collect();
        if blocked.is_empty() {
            let mut out = vec![0.0; n];
            for (a, &i) in free.iter().enumerate() {
                out[i] = d[a];
            }
            return out.iter().all(|v| v.is_finite()).then_some(out);
        }
        for a in blocked {
            pinned[free[a]] = true;
        }
    }
    None
}

fn newton(obj: &ScaleObjective, init: &[f64], cfg: &ContinuousConfig) -> Result<ScaleSolution, OptimizeError> {
    let n = init.len();
    let floor = cfg.floor(n);
    let mut x = if is_feasible(init, floor) {
        init.to_vec()
    } else {
        project_simplex(init, floor)
    };
    let mut fx = obj.value(&x);
    if !fx.is_finite() {
        return Err(OptimizeError::NonFiniteEnergy("initial scales"));
    }
    let initial_energy = fx;
    let mut energies = vec![fx];
    let mut g = obj.grad(&x);
    check_grad(&g)?;
    if fx == 0.0 {
        return Ok(ScaleSolution {
            grad_norm: projected_grad_norm(&x, &g, floor),
            lambda: x,
            energy: fx,
            initial_energy,
            iterations: 0,
            stop: StopReason::AlreadyOptimal,
            energies,
        });
    }
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if gmax > 0.0 { 0.1 / (n as f64 * gmax) } else { 1.0 };
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let mut next = None;
        if let Some(d) = newton_step(&obj.curvature_model(&x), &g, &x, floor) {
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            // largest step keeping every scale above the floor
            let reach = x
                .iter()
                .zip(&d)
                .filter(|(_, &di)| di < 0.0)
                .map(|(&xi, &di)| (xi - floor) / -di)
                .fold(1.0f64, f64::min);
            let mut t = reach;
            for _ in 0..cfg.max_halvings.min(40) {
                if !(slope < 0.0) || t <= 0.0 {
                    break;
                }
                let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let y = project_simplex(&y, floor);
                let fy = obj.value(&y);
                if fy.is_finite() && fy < fx && fy <= fx + cfg.armijo * t * slope {
                    next = Some((y, fy));
                    break;
                }
                t *= 0.5;
            }
        }
        if next.is_none() {
            if projected_grad_norm(&x, &g, floor) < cfg.grad_tol {
                stop = StopReason::GradientTolerance;
                break;
            }
            if let Some((y, fy, s)) = gradient_step(obj, &x, fx, &g, step, cfg, floor) {
                step = 2.0 * s;
                next = Some((y, fy));
            }
        }
        let Some((y, fy)) = next else {
            stop = StopReason::LineSearchExhausted;
            break;
        };
        iterations += 1;
        let rel = (fx - fy) / fx.abs().max(1e-300);
        x = y;
        fx = fy;
        energies.push(fx);
        g = obj.grad(&x);
        check_grad(&g)?;
        if rel < cfg.rel_tol {
            stop = StopReason::RelativeDecrease;
            break;
        }
    }
    Ok(ScaleSolution {
        grad_norm: projected_grad_norm(&x, &g, floor),
        lambda: x,
        energy: fx,
        initial_energy,
        iterations,
        stop,
        energies,
    })
}

fn projected_gradient(
    obj: &ScaleObjective,
    init: &[f64],
    cfg: &ContinuousConfig,
) -> Result<ScaleSolution, OptimizeError> {
    let n = init.len();
    let floor = cfg.floor(n);
    // keep a feasible start bit-exact so its energy is reproduced
    let mut x = if is_feasible(init, floor) {
        init.to_vec()
    } else {
        project_simplex(init, floor)
    };
    let mut fx = obj.value(&x);
    if !fx.is_finite() {
        return Err(OptimizeError::NonFiniteEnergy("initial scales"));
    }
    let initial_energy = fx;
    let mut energies = vec![fx];
    let mut g = obj.grad(&x);
    check_grad(&g)?;
    if fx == 0.0 {
        return Ok(ScaleSolution {
            grad_norm: projected_grad_norm(&x, &g, floor),
            lambda: x,
            energy: fx,
            initial_energy,
            iterations: 0,
            stop: StopReason::AlreadyOptimal,
            energies,
        });
    }
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if gmax > 0.0 { 0.1 / (n as f64 * gmax) } else { 1.0 };
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        if projected_grad_norm(&x, &g, floor) < cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let Some((y, fy, s)) = gradient_step(obj, &x, fx, &g, step, cfg, floor) else {
            stop = StopReason::LineSearchExhausted;
            break;
        };
        iterations += 1;
        let rel = (fx - fy) / fx.abs().max(1e-300);
        x = y;
        fx = fy;
        energies.push(fx);
        g = obj.grad(&x);
        check_grad(&g)?;
        if rel < cfg.rel_tol {
            stop = StopReason::RelativeDecrease;
            break;
        }
        step = s * 2.0;
    }
    Ok(ScaleSolution {
        grad_norm: projected_grad_norm(&x, &g, floor),
        lambda: x,
        energy: fx,
        initial_energy,
        iterations,
        stop,
        energies,
    })
}

/// Interior-point style alternative: gradient descent on
/// `E(x) - mu * sum ln(x_i - floor)` within the sum-to-one hyperplane, with
/// `mu` shrinking tenfold per stage.
fn log_barrier(
    obj: &ScaleObjective,
    init: &[f64],
    cfg: &ContinuousConfig,
) -> Result<ScaleSolution, OptimizeError> {
    let n = init.len();
    let floor = cfg.floor(n);
    // start strictly inside
    let mut x = project_simplex(init, floor + 0.01 / n as f64);
    let start = x.clone();
    let f0 = obj.value(&x);
    if !f0.is_finite() {
        return Err(OptimizeError::NonFiniteEnergy("initial scales"));
    }
    let mut energies = vec![f0];
    let (mut best_x, mut best_f) = (x.clone(), f0);
    let mut mu = 1e-3 * f0.abs().max(1e-6);
    let barrier = |x: &[f64], mu: f64| -> f64 {
        let mut b = 0.0;
        for &v in x {
            if v <= floor {
                return f64::INFINITY;
            }
            b -= (v - floor).ln();
        }
        obj.value(x) + mu * b
    };
    let mut iterations = 0;
    let per_stage = (cfg.max_iters / 6).max(1);
    for _ in 0..6 {
        let mut fx = barrier(&x, mu);
        let mut step = 0.1 / n as f64;
        for _ in 0..per_stage {
            let mut g = obj.grad(&x);
            check_grad(&g)?;
            for (gi, &xi) in g.iter_mut().zip(&x) {
                *gi -= mu / (xi - floor);
            }
            let mean = g.iter().sum::<f64>() / n as f64;
            let dir: Vec<f64> = g.iter().map(|v| -(v - mean)).collect();
            let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
            let dnorm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            if dnorm < cfg.grad_tol {
                break;
            }
            let mut s = step / dnorm.max(1e-300);
            let mut moved = false;
            for _ in 0..cfg.max_halvings {
                let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                let fy = barrier(&y, mu);
                if fy.is_finite() && fy <= fx + cfg.armijo * s * slope {
                    let rel = (fx - fy) / fx.abs().max(1e-300);
                    x = y;
                    fx = fy;
                    moved = rel >= cfg.rel_tol;
                    step = 2.0 * s * dnorm;
                    break;
                }
                s *= 0.5;
            }
            iterations += 1;
            if !moved {
                break;
            }
        }
        let f = obj.value(&x);
        if f < best_f {
            best_f = f;
            best_x = x.clone();
            energies.push(f);
        }
        mu *= 0.1;
    }
    // never return something worse than the feasible start
    if best_f > f0 {
        best_x = start;
        best_f = f0;
    }
    let g = obj.grad(&best_x);
    Ok(ScaleSolution {
        grad_norm: projected_grad_norm(&best_x, &g, floor),
        lambda: best_x,
        energy: best_f,
        initial_energy: f0,
        iterations,
        stop: StopReason::MaxIterations,
        energies,
    })
}
