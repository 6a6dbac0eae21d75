//! Run configuration, as read from a JSON file.

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyParams, InvalidParams};
use crate::init::InitConfig;
use crate::optimize::{OptimizeError, SolverConfig};
use crate::segmentation::DEFAULT_COMPACTNESS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationMethod {
    Grid,
    Slic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub method: SegmentationMethod,
    pub superpixels: usize,
    pub compactness: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            method: SegmentationMethod::Slic,
            superpixels: 50,
            compactness: DEFAULT_COMPACTNESS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides `solver.seed` once the config is made effective.
    pub seed: u64,
    pub energy: EnergyParams,
    pub solver: SolverConfig,
    pub segmentation: SegmentationConfig,
    pub init: InitConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Energy(#[from] InvalidParams),
    #[error(transparent)]
    Solver(#[from] OptimizeError),
    #[error("invalid config field {name}: {reason}")]
    Invalid { name: &'static str, reason: &'static str },
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.energy.validate()?;
        self.solver.validate()?;
        if self.segmentation.superpixels == 0 {
            return Err(ConfigError::Invalid {
                name: "segmentation.superpixels",
                reason: "must be at least 1",
            });
        }
        if !(self.segmentation.compactness > 0.0 && self.segmentation.compactness.is_finite()) {
            return Err(ConfigError::Invalid {
                name: "segmentation.compactness",
                reason: "must be > 0",
            });
        }
        let i = &self.init;
        if i.samples < 4 {
            return Err(ConfigError::Invalid {
                name: "init.samples",
                reason: "need at least 4 correspondences",
            });
        }
        if !(i.essential_prior >= 0.0 && i.fronto_prior >= 0.0) || !(i.essential_prior + i.fronto_prior).is_finite() {
            return Err(ConfigError::Invalid {
                name: "init",
                reason: "prior weights must be finite and >= 0",
            });
        }
        let r = &i.motion.ransac;
        if r.iterations == 0 || !(r.threshold > 0.0 && r.threshold.is_finite()) {
            return Err(ConfigError::Invalid {
                name: "init.motion.ransac",
                reason: "need iterations >= 1 and a positive threshold",
            });
        }
        Ok(())
    }

    /// The configuration actually run, with the master seed propagated.
    pub fn effective(&self) -> Self {
        let mut out = self.clone();
        out.solver.seed = self.seed;
        out
    }
}

/// Parses and validates a JSON run configuration. Missing fields take defaults.
pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(parse_run_config("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_override() {
        let c = parse_run_config(r#"{"seed": 7, "energy": {"alpha2": 0}, "segmentation": {"method": "grid"}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.energy.alpha2, 0.0);
        assert_eq!(c.energy.alpha1, EnergyParams::default().alpha1);
        assert_eq!(c.segmentation.method, SegmentationMethod::Grid);
        assert_eq!(c.effective().solver.seed, 7);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_run_config(r#"{"sed": 1}"#), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_run_config("[1,2"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            parse_run_config(r#"{"energy": {"alpha1": -1}}"#),
            Err(ConfigError::Energy(_))
        ));
        assert!(matches!(
            parse_run_config(r#"{"solver": {"particles_per_node": 0}}"#),
            Err(ConfigError::Solver(_))
        ));
        assert!(matches!(
            parse_run_config(r#"{"segmentation": {"superpixels": 0}}"#),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn round_trips() {
        let c = RunConfig {
            seed: 3,
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_run_config(&text).unwrap(), c);
    }
}
