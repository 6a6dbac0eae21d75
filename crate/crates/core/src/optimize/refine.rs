use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::continuous::solve_scales;
use super::mrf::PairwiseMrf;
use super::particles::{sample_particles, ParticleSet};
use super::simplex::init_scales;
use super::{OptimizeError, SolverConfig, SolverTrace, Stage, TraceEntry};
use crate::energy::{arap_pair, lift_side, orient_pair, proj_node, AnchorLift, EdgeLift, EnergyParams, ScaleObjective};
use crate::state::{Hypothesis, Problem, SceneState};

/// Stand-in for infinite label costs so message passing stays finite.
const BIG: f64 = 1e12;

fn finite_or_big(v: f64) -> f64 {
    if v.is_finite() {
        v.min(BIG)
    } else {
        BIG
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub state: SceneState,
    pub energy: f64,
    pub trace: SolverTrace,
    /// Refinement rounds run, including rejected ones.
    pub rounds: usize,
    pub accepted_rounds: usize,
}

/// Discrete energy over particle labels at fixed scales. A labeling's value
/// equals the total energy of the corresponding hypotheses.
pub(crate) fn build_mrf(
    problem: &Problem,
    set: &ParticleSet,
    lambda: &[f64],
    params: &EnergyParams,
) -> PairwiseMrf {
    let parts = &set.particles;
    let unary: Vec<Vec<f64>> = parts
        .par_iter()
        .enumerate()
        .map(|(i, ps)| {
            ps.iter()
                .map(|h| finite_or_big(params.alpha1 * proj_node(&problem.observations[i], h, problem, params.w3)))
                .collect()
        })
        .collect();
    let anchors: Vec<Vec<Option<AnchorLift>>> = parts
        .iter()
        .enumerate()
        .map(|(i, ps)| ps.iter().map(|h| AnchorLift::new(&problem.anchor_rays[i], h)).collect())
        .collect();

    // (from, to, table[l_from * L_to + l_to])
    let knn: Vec<(usize, usize, Vec<f64>)> = problem
        .graph
        .knn
        .edges
        .par_iter()
        .map(|e| {
            let (f, t) = (e.from, e.to);
            let mut table = Vec::with_capacity(parts[f].len() * parts[t].len());
            for (hf, af) in parts[f].iter().zip(&anchors[f]) {
                for (ht, at) in parts[t].iter().zip(&anchors[t]) {
                    let v = match (af, at) {
                        (Some(af), Some(at)) => {
                            e.weight * arap_pair(lambda[f], lambda[t], &hf.motion, &ht.motion, af, at)
                        }
                        _ => BIG,
                    };
                    table.push(finite_or_big(v));
                }
            }
            (f, t, table)
        })
        .collect();
    let adj: Vec<(usize, usize, Vec<f64>)> = problem
        .graph
        .adjacency
        .par_iter()
        .zip(&problem.edge_rays)
        .map(|(e, rays)| {
            let (f, t) = (e.from, e.to);
            let sf: Vec<_> = parts[f].iter().map(|h| lift_side(rays, h)).collect();
            let st: Vec<_> = parts[t].iter().map(|h| lift_side(rays, h)).collect();
            let mut table = Vec::with_capacity(sf.len() * st.len());
            for (hf, lf) in parts[f].iter().zip(&sf) {
                for (ht, lt) in parts[t].iter().zip(&st) {
                    let cont = EdgeLift::from_sides(lf, lt).value(lambda[f], lambda[t], params.sigma_trunc);
                    let orient = orient_pair(&hf.plane.normal, &ht.plane.normal, params.n_trunc);
                    table.push(finite_or_big(
                        params.alpha2 * e.weight * cont + params.alpha3 * orient,
                    ));
                }
            }
            (f, t, table)
        })
        .collect();

    // merge directed terms into one table per unordered pair, stored (a < b)
    let mut pairs: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (f, t, table) in knn.into_iter().chain(adj) {
        let (a, b) = (f.min(t), f.max(t));
        let (la, lb) = (parts[a].len(), parts[b].len());
        let acc = pairs.entry((a, b)).or_insert_with(|| vec![0.0; la * lb]);
        if f == a {
            for (x, v) in acc.iter_mut().zip(&table) {
                *x += v;
            }
        } else {
            // table is indexed [l_b * la + l_a]
            for xa in 0..la {
                for xb in 0..lb {
                    acc[xa * lb + xb] += table[xb * la + xa];
                }
            }
        }
    }
    let mut mrf = PairwiseMrf::new(unary);
    for ((a, b), cost) in pairs {
        mrf.add_edge(a, b, cost);
    }
    mrf
}

/// Scale solve from uniform scales, then particle refinement.
pub fn solve(
    problem: &Problem,
    hypotheses: Vec<Hypothesis>,
    params: &EnergyParams,
    cfg: &SolverConfig,
) -> Result<RefineOutcome, OptimizeError> {
    cfg.validate()?;
    let n = hypotheses.len();
    let sol = {
        let obj = ScaleObjective::new(problem, &hypotheses, params);
        solve_scales(&obj, &init_scales(n), &cfg.continuous)?
    };
    let mut trace = SolverTrace::default();
    trace.push_solution(0, &sol);
    let state = SceneState {
        hypotheses,
        lambda: sol.lambda,
    };
    refine_with_trace(problem, state, params, cfg, trace)
}

/// Particle refinement of planes and motions with accept-if-better rounds.
pub fn refine(
    problem: &Problem,
    state: &SceneState,
    params: &EnergyParams,
    cfg: &SolverConfig,
) -> Result<RefineOutcome, OptimizeError> {
    cfg.validate()?;
    refine_with_trace(problem, state.clone(), params, cfg, SolverTrace::default())
}

fn refine_with_trace(
    problem: &Problem,
    mut state: SceneState,
    params: &EnergyParams,
    cfg: &SolverConfig,
    mut trace: SolverTrace,
) -> Result<RefineOutcome, OptimizeError> {
    let energy_of = |hyps: &[Hypothesis], lambda: &[f64]| ScaleObjective::new(problem, hyps, params).value(lambda);
    let mut energy = energy_of(&state.hypotheses, &state.lambda);
    if !energy.is_finite() {
        return Err(OptimizeError::NonFiniteEnergy("refinement start"));
    }
    trace.entries.push(TraceEntry {
        stage: Stage::Refine,
        round: 0,
        iteration: 0,
        energy,
        grad_norm: None,
        accepted: true,
    });
    let (mut rounds, mut accepted_rounds, mut idle) = (0, 0, 0);
    for round in 1..=cfg.max_outer_iters {
        rounds = round;
        let scales = cfg.perturbation.scaled(0.5f64.powi(round as i32 - 1));
        let set = sample_particles(
            problem,
            &state.hypotheses,
            cfg.particles_per_node,
            &scales,
            cfg.seed,
            round,
        );
        let mrf = build_mrf(problem, &set, &state.lambda, params);
        let (labels, _) = mrf.solve_trws(cfg.mrf_sweeps);
        let candidate: Vec<Hypothesis> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| set.particles[i][l])
            .collect();
        let cand_energy = if candidate == state.hypotheses {
            energy
        } else {
            energy_of(&candidate, &state.lambda)
        };
        let accept = cand_energy.is_finite() && cand_energy < energy;
        trace.entries.push(TraceEntry {
            stage: Stage::Refine,
            round,
            iteration: 0,
            energy: cand_energy,
            grad_norm: None,
            accepted: accept,
        });
        if !accept {
            log::debug!("refinement round {round} rejected ({cand_energy:e} >= {energy:e})");
            idle += 1;
            if idle >= cfg.patience {
                break;
            }
            continue;
        }
        idle = 0;
        accepted_rounds += 1;
        state.hypotheses = candidate;
        energy = cand_energy;
        if cfg.resolve_scales {
            let obj = ScaleObjective::new(problem, &state.hypotheses, params);
            let sol = solve_scales(&obj, &state.lambda, &cfg.continuous)?;
            // the first recorded energy repeats the relabeled state
            trace.push_solution(round, &sol);
            if sol.energy <= energy {
                state.lambda = sol.lambda;
                energy = sol.energy;
            }
        }
        log::debug!("refinement round {round}: energy {energy:e}");
    }
    Ok(RefineOutcome {
        state,
        energy,
        trace,
        rounds,
        accepted_rounds,
    })
}
