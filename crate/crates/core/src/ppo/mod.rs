//! Neural reaching policy trained with PPO: MLP with manual backprop,
//! Gaussian policy head, GAE, clipped-surrogate updates and the training /
//! evaluation loops.

mod buffer;
mod mlp;
mod policy;
mod train;
mod update;

pub use buffer::RolloutBuffer;
pub use mlp::{Activations, Layer, Mlp};
pub use policy::{GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use train::{
    evaluate, evaluate_controller, train, Controller, CurvePoint, EpisodeTrace, EvalStats, TrainedPolicy,
    ARTIFACT_VERSION,
};
pub use update::{
    clipped_surrogate, ppo_gradient, ppo_update, surrogate_objective, Optimizer, OptimizerKind, PpoGradient,
    Scratch, UpdateDiagnostics,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rollout buffer is empty or has no advantages")]
    EmptyBuffer,
    #[error("non-finite loss (surrogate {surrogate}, value loss {value_loss}, entropy {entropy})")]
    NonFiniteLoss {
        surrogate: f64,
        value_loss: f64,
        entropy: f64,
    },
    #[error("training finished but mean final distance {mean_final_distance:.4} m exceeds {threshold} m")]
    TrainingFailed {
        policy: Box<TrainedPolicy>,
        mean_final_distance: f64,
        threshold: f64,
    },
    #[error("policy was trained for model {policy} but the robot is now {robot}; retrain required")]
    DigestMismatch { policy: String, robot: String },
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub steps_per_update: usize,
    pub total_steps: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub optimizer: OptimizerKind,
    pub hidden_sizes: Vec<usize>,
    pub init_log_std: f64,
    /// Deterministic episodes run after training to set the success flag.
    pub eval_episodes: usize,
    /// Mean final distance (m) below which training counts as a success.
    pub success_threshold: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 10,
            minibatch_size: 64,
            learning_rate: 3e-4,
            steps_per_update: 2048,
            total_steps: 200_000,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            optimizer: OptimizerKind::Adam,
            hidden_sizes: vec![64, 64],
            init_log_std: 0.05f64.ln(),
            eval_episodes: 50,
            success_threshold: 0.02,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.steps_per_update == 0 || self.minibatch_size == 0 {
            return bad("steps_per_update and minibatch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.hidden_sizes.iter().any(|h| *h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.value_coef.is_finite() && self.entropy_coef.is_finite() && self.max_grad_norm >= 0.0) {
            return bad("coefficients must be finite");
        }
        Ok(())
    }
}
