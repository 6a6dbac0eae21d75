//! Scale solve over the simplex followed by particle-based refinement of the
//! per-superpixel planes and motions.

mod continuous;
mod mrf;
mod particles;
mod refine;
mod simplex;

use serde::{Deserialize, Serialize};

pub use continuous::{solve_scales, ContinuousConfig, ContinuousMethod, ScaleSolution, StopReason};
pub use mrf::{MrfEdge, PairwiseMrf};
pub use particles::{sample_particles, ParticleSet, Perturbation};
pub use refine::{refine, solve, RefineOutcome};
pub use simplex::{compensated_sum, init_scales, project_simplex};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("energy is not finite at the {0}")]
    NonFiniteEnergy(&'static str),
    #[error("invalid solver setting {name}: {reason}")]
    InvalidConfig {
        name: &'static str,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub particles_per_node: usize,
    pub continuous: ContinuousConfig,
    pub seed: u64,
    pub perturbation: Perturbation,
    /// Re-solve the scales after every accepted relabeling.
    pub resolve_scales: bool,
    /// Stop refining after this many consecutive rejected rounds.
    pub patience: usize,
    /// Forward/backward sweeps of message passing per round.
    pub mrf_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 8,
            particles_per_node: 50,
            continuous: ContinuousConfig::default(),
            seed: 0,
            perturbation: Perturbation::default(),
            resolve_scales: true,
            patience: 2,
            mrf_sweeps: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |name, reason| Err(OptimizeError::InvalidConfig { name, reason });
        if self.particles_per_node == 0 {
            return bad("particles_per_node", "must be at least 1");
        }
        let c = &self.continuous;
        if !(c.grad_tol > 0.0) || !(c.rel_tol > 0.0) {
            return bad("continuous", "tolerances must be > 0");
        }
        if !(c.armijo > 0.0 && c.armijo < 1.0) {
            return bad("continuous.armijo", "must lie in (0, 1)");
        }
        if let Some(e) = c.epsilon {
            if !(e >= 0.0) {
                return bad("continuous.epsilon", "must be >= 0");
            }
        }
        let p = &self.perturbation;
        if [p.normal, p.rotation, p.translation, p.depth]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("perturbation", "scales must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Continuous,
    Refine,
}

/// One recorded solver event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    /// Refinement round; 0 for the initial scale solve.
    pub round: usize,
    pub iteration: usize,
    pub energy: f64,
    pub grad_norm: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub entries: Vec<TraceEntry>,
}

impl SolverTrace {
    pub(crate) fn push_solution(&mut self, round: usize, sol: &ScaleSolution) {
        let last = sol.energies.len().saturating_sub(1);
        for (it, &e) in sol.energies.iter().enumerate() {
            self.entries.push(TraceEntry {
                stage: Stage::Continuous,
                round,
                iteration: it,
                energy: e,
                grad_norm: (it == last).then_some(sol.grad_norm),
                accepted: true,
            });
        }
    }

    /// Energies in recording order, counting only states the solver kept.
    pub fn energies(&self) -> Vec<f64> {
        self.entries.iter().filter(|e| e.accepted).map(|e| e.energy).collect()
    }

    /// Number of kept states whose energy exceeds their predecessor's.
    pub fn violations(&self) -> usize {
        self.energies().windows(2).filter(|w| w[1] > w[0]).count()
    }
}
