//! Run configuration file: one TOML document holding the robot, the task,
//! and the settings of every pipeline.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::SweepConfig;
use crate::classical::ClassicalConfig;
use crate::env::EnvConfig;
use crate::kinematics::{EePose, RobotModel};
use crate::noise::NoiseModel;
use crate::ppo::PpoConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Reaching task parameters; the robot comes from the `[robot]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub goal: EePose,
    /// Observation noise σ (rad) on every joint.
    pub sigma: f64,
    pub max_steps: usize,
    pub action_clip: f64,
    pub success_radius: f64,
    pub randomize_start: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            goal: env.goal,
            sigma: 0.0,
            max_steps: env.max_steps,
            action_clip: env.action_clip,
            success_radius: env.success_radius,
            randomize_start: env.randomize_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub jobs: usize,
    /// Episodes for `eval` and `traditional`.
    pub episodes: usize,
    pub robot: RobotModel,
    pub task: TaskConfig,
    pub classical: ClassicalConfig,
    pub ppo: PpoConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            jobs: 1,
            episodes: 100,
            robot: RobotModel::default(),
            task: TaskConfig::default(),
            classical: ClassicalConfig::default(),
            ppo: PpoConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let path = path.into();
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// The reaching environment with observation noise σ = `task.sigma`.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            model: self.robot.clone(),
            goal: self.task.goal,
            obs_noise: NoiseModel::uniform(self.task.sigma.max(0.0), self.seed).expect("non-negative sigma"),
            max_steps: self.task.max_steps,
            action_clip: self.task.action_clip,
            success_radius: self.task.success_radius,
            randomize_start: self.task.randomize_start,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if !(self.task.sigma.is_finite() && self.task.sigma >= 0.0) {
            return Err(ConfigError::Invalid("task.sigma must be finite and non-negative".into()));
        }
        self.env_config().validate().map_err(|e| invalid(&e))?;
        self.ppo.validate().map_err(|e| invalid(&e))?;
        self.sweep.validate().map_err(|e| invalid(&e))?;
        if self.classical.n_waypoints < 2 {
            return Err(ConfigError::Invalid("classical.n_waypoints must be at least 2".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text, "mem").unwrap();
        assert_eq!(back, cfg);
        assert!(back.validate().is_ok());
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml_str("", "mem").unwrap(), RunConfig::default());
    }

    #[test]
    fn parse_error_has_line_context() {
        let err = RunConfig::from_toml_str("seed = 1\n[task]\nsigma = \"x\"\n", "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_robot_is_a_parse_error() {
        let err = RunConfig::from_toml_str(
            "[robot]\nlink_lengths = [0.4, -0.3, 0.2]\njoint_limits = [[-1, 1], [-1, 1], [-1, 1]]\n",
            "mem",
        );
        assert!(err.is_err());
    }

    #[test]
    fn unreachable_goal_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.task.goal = EePose::new(3.0, 0.0);
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
