//! Experiment configuration read by the command-line driver.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::GridSpec;
use crate::mdp_solver::SolverParams;
use crate::pomdp_solver::PiParams;
use crate::risk::RiskMeasure;
use crate::sim::McParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where the model comes from: a generated grid or a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Grid(GridSpec),
    ModelPath(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default = "default_measure")]
    pub measure: RiskMeasure,
    /// Replaces the model's constraint budgets when present.
    #[serde(default)]
    pub budgets: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub pi: PiParams,
    #[serde(default)]
    pub mc: McParams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_measure() -> RiskMeasure {
    RiskMeasure::Expectation
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative model path is resolved against the
    /// config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let Scenario::ModelPath(p) = &mut cfg.scenario {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        match &self.scenario {
            Scenario::Grid(spec) => {
                if let Err(e) = spec.validate() {
                    return invalid(e.to_string());
                }
            }
            Scenario::ModelPath(p) => {
                if !p.is_file() {
                    return invalid(format!("model file {} does not exist", p.display()));
                }
            }
        }
        if let Err(e) = self.measure.validate() {
            return invalid(e.to_string());
        }
        if let Some(b) = &self.budgets {
            if b.iter().any(|x| !x.is_finite()) {
                return invalid("budgets must be finite".into());
            }
        }
        let s = &self.solver;
        if !(s.vi_tol > 0.0) || s.vi_max_iters == 0 || !(s.dual_step0 > 0.0) || !(s.lambda_cap > 0.0) {
            return invalid("solver tolerances, iteration caps and step sizes must be positive".into());
        }
        if !(s.inner.zeta_max > 0.0 && s.inner.tol > 0.0) {
            return invalid("inner zeta_max and tol must be positive".into());
        }
        let pi = &self.pi;
        if pi.n_new == 0 || pi.n_new > pi.n_max {
            return invalid(format!("need 1 <= n_new ({}) <= n_max ({})", pi.n_new, pi.n_max));
        }
        if !(pi.pg_step > 0.0) || !(pi.improvement_tol >= 0.0) {
            return invalid("pg_step must be positive and improvement_tol nonnegative".into());
        }
        if self.mc.n_runs == 0 || self.mc.horizon == 0 {
            return invalid("mc.n_runs and mc.horizon must be at least 1".into());
        }
        if !(self.mc.risk_epsilon > 0.0 && self.mc.risk_epsilon <= 1.0) {
            return invalid(format!("mc.risk_epsilon must lie in (0, 1], got {}", self.mc.risk_epsilon));
        }
        Ok(())
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        match &self.scenario {
            Scenario::Grid(g) => Some(g),
            Scenario::ModelPath(_) => None,
        }
    }
}
