//! Experiment configuration: a versioned JSON schema in which everything but
//! the generator family and the target (y, z) is defaulted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::families::{build_family, FamilyConfig};
use crate::harness::{EpsilonLadder, LadderRung, Mode, RepresentationProblem, RunOptions};
use crate::oracles::OracleSuiteConfig;
use crate::solver::SolverConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides every other seed source.
pub const SEED_ENV_VAR: &str = "BSDE_REP_SEED";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default)]
    pub t: f64,
    pub y: f64,
    pub z: Vec<f64>,
}

/// Epsilon-ladder override. Explicit rungs win; otherwise the default
/// dyadic ladder is built with a flat or eps^-2-scaled path count.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    pub rungs: Option<Vec<LadderRung>>,
    pub n_paths: Option<usize>,
    /// Scale the path count like eps^-2 down the ladder.
    pub scale_paths: bool,
}

pub const DEFAULT_N_PATHS: usize = 100_000;

impl LadderConfig {
    pub fn to_ladder(&self) -> EpsilonLadder {
        if let Some(rungs) = &self.rungs {
            return EpsilonLadder {
                rungs: rungs.clone(),
            };
        }
        let base = self.n_paths.unwrap_or(DEFAULT_N_PATHS);
        if self.scale_paths {
            EpsilonLadder::default_with_scaled_paths(base)
        } else {
            EpsilonLadder::default_with_paths(base)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub generator: FamilyConfig,
    pub target: TargetConfig,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_outer_runs")]
    pub outer_runs: usize,
    #[serde(default)]
    pub oracles: OracleSuiteConfig,
    #[serde(default = "default_compliance_samples")]
    pub compliance_samples: usize,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_dim() -> usize {
    1
}
fn default_mode() -> Mode {
    Mode::L1
}
fn default_seed() -> u64 {
    42
}
fn default_jobs() -> usize {
    1
}
fn default_outer_runs() -> usize {
    1
}
fn default_compliance_samples() -> usize {
    2000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {})",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        if self.dim == 0 || self.dim > 8 {
            return Err(Error::Config(format!(
                "dim must be in 1..=8, got {}",
                self.dim
            )));
        }
        if self.target.z.len() != self.dim {
            return Err(Error::Config(format!(
                "target.z has length {} but dim is {}",
                self.target.z.len(),
                self.dim
            )));
        }
        if self.outer_runs == 0 {
            return Err(Error::Config("outer_runs must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Builds the generator and target this configuration describes.
    pub fn to_problem(&self) -> Result<RepresentationProblem> {
        let spec = build_family(&self.generator, self.dim)?;
        RepresentationProblem::new(
            spec,
            self.target.t,
            self.target.y,
            self.target.z.clone(),
            self.mode,
        )
    }

    /// Harness options with the seed resolved through the override chain.
    pub fn run_options(&self, cli_seed: Option<u64>, cli_jobs: Option<usize>, force: bool) -> RunOptions {
        RunOptions {
            seed: effective_seed(self.seed, cli_seed),
            jobs: cli_jobs.unwrap_or(self.jobs),
            force,
            outer_runs: self.outer_runs,
            compliance_samples: self.compliance_samples,
        }
    }
}

/// Seed precedence: the environment variable beats the command line, which
/// beats the configuration file.
pub fn effective_seed(config_seed: u64, cli_seed: Option<u64>) -> u64 {
    if let Ok(v) = std::env::var(SEED_ENV_VAR) {
        if let Ok(n) = v.trim().parse::<u64>() {
            return n;
        }
    }
    cli_seed.unwrap_or(config_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "generator": { "family": "pure-quadratic", "gamma": 0.5 },
        "target": { "y": 1.0, "z": [2.0] }
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.schema_version, 1);
        assert_eq!(cfg.dim, 1);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.mode, Mode::L1);
        assert_eq!(cfg.outer_runs, 1);
        let ladder = cfg.ladder.to_ladder();
        assert_eq!(ladder.rungs.len(), 6);
        assert_eq!(ladder.rungs[0].n_paths, DEFAULT_N_PATHS);
        let problem = cfg.to_problem().unwrap();
        assert_eq!(problem.y, 1.0);
    }

    #[test]
    fn missing_required_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{ "target": { "y": 0.0, "z": [1.0] } }"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{ "generator": { "family": "pure-quadratic", "gamma": 0.5 } }"#
        )
        .is_err());
        // y and z are required inside target.
        assert!(ExperimentConfig::from_json(
            r#"{ "generator": { "family": "pure-quadratic", "gamma": 0.5 },
                 "target": { "z": [1.0] } }"#
        )
        .is_err());
    }

    #[test]
    fn unknown_fields_and_bad_versions_are_rejected() {
        let unknown = r#"{
            "generator": { "family": "pure-quadratic", "gamma": 0.5 },
            "target": { "y": 1.0, "z": [2.0] },
            "tyop": 3
        }"#;
        assert!(ExperimentConfig::from_json(unknown).is_err());
        let bad_version = r#"{
            "schema_version": 7,
            "generator": { "family": "pure-quadratic", "gamma": 0.5 },
            "target": { "y": 1.0, "z": [2.0] }
        }"#;
        assert!(matches!(
            ExperimentConfig::from_json(bad_version),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let cfg = r#"{
            "generator": { "family": "pure-quadratic", "gamma": 0.5 },
            "target": { "y": 1.0, "z": [2.0, 0.0] }
        }"#;
        assert!(ExperimentConfig::from_json(cfg).is_err());
    }

    #[test]
    fn explicit_rungs_override_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{
            "generator": { "family": "pure-quadratic", "gamma": 0.5 },
            "target": { "y": 1.0, "z": [2.0] },
            "ladder": { "rungs": [ { "epsilon": 0.125, "steps": 16, "n_paths": 500 } ] }
        }"#,
        )
        .unwrap();
        let ladder = cfg.ladder.to_ladder();
        assert_eq!(ladder.rungs.len(), 1);
        assert_eq!(ladder.rungs[0].n_paths, 500);
    }

    #[test]
    fn seed_precedence_chain() {
        // No env var set in tests: CLI beats config.
        std::env::remove_var(SEED_ENV_VAR);
        assert_eq!(effective_seed(42, None), 42);
        assert_eq!(effective_seed(42, Some(7)), 7);
        std::env::set_var(SEED_ENV_VAR, "99");
        assert_eq!(effective_seed(42, Some(7)), 99);
        std::env::remove_var(SEED_ENV_VAR);
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.target.z, cfg.target.z);
    }
}
