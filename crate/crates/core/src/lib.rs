//! Planar SCARA reaching simulator with two control pipelines: a classical
//! plan-then-execute stack and a PPO-trained policy, plus the noise sweep
//! that compares them.

pub mod benchmark;
pub mod classical;
pub mod config;
pub mod env;
pub mod format;
pub mod kinematics;
pub mod noise;
pub mod ppo;

pub use classical::{run_traditional, ClassicalConfig, ExecutionLog, Trajectory};
pub use env::{EnvConfig, EnvState, Observation, StepResult};
pub use kinematics::{EePose, JointState, RobotGeometry, RobotModel};
pub use noise::{NoiseModel, RngStream};
pub use ppo::{PpoConfig, TrainedPolicy};
pub use config::RunConfig;
