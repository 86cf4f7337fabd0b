//! Sense-model-plan-act pipeline: estimate the end-effector from observed
//! joints, plan a joint-space path with IK and linear interpolation, then
//! execute it open loop through noisy joint controllers.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{reset, EnvConfig, EnvError, TraceRow};
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, EePose, IkParams, JointState, KinematicsError, RobotModel,
};
use crate::noise::NoiseModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("a trajectory needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalConfig {
    pub n_waypoints: usize,
    pub ik: IkParams,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            n_waypoints: 50,
            ik: IkParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<JointState>,
    goal: EePose,
}

impl Trajectory {
    pub fn waypoints(&self) -> &[JointState] {
        &self.waypoints
    }

    pub fn goal(&self) -> EePose {
        self.goal
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Largest per-joint change between consecutive waypoints.
    pub fn max_step(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].max_abs_diff(&w[1]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionLog {
    pub commanded: Vec<JointState>,
    pub realized: Vec<JointState>,
    pub ee_trace: Vec<EePose>,
    pub goal: EePose,
    pub final_distance: f64,
}

impl ExecutionLog {
    /// Rows in the episode trace schema: commanded joints fill the
    /// observation columns and the reward column is the negative distance.
    pub fn trace_rows(&self) -> Vec<TraceRow> {
        self.realized
            .iter()
            .zip(&self.commanded)
            .zip(&self.ee_trace)
            .enumerate()
            .map(|(i, ((r, c), ee))| {
                let distance = ee.distance(&self.goal);
                TraceRow {
                    step: i,
                    q_true: r.0,
                    q_noisy: c.0,
                    ee: *ee,
                    reward: -distance,
                    distance,
                }
            })
            .collect()
    }
}

pub fn estimate_state(model: &RobotModel, q_observed: &JointState) -> EePose {
    forward_kinematics(model, q_observed)
}

// Deterministic restart seeds for IK, tried in order after the start pose.
const IK_RESTARTS: [[f64; 3]; 6] = [
    [0.0, 1.0, 1.0],
    [0.0, -1.0, -1.0],
    [1.5, 1.5, -1.5],
    [-1.5, -1.5, 1.5],
    [3.0, 2.0, 0.5],
    [-3.0, -2.0, -0.5],
];

/// IK for the goal followed by linear joint-space interpolation from
/// `q_start`. Uses no randomness: the plan depends only on its inputs.
pub fn plan_trajectory(
    model: &RobotModel,
    q_start: &JointState,
    goal: &EePose,
    n_waypoints: usize,
    ik: &IkParams,
) -> Result<Trajectory, ClassicalError> {
    if n_waypoints < 2 {
        return Err(ClassicalError::TooFewWaypoints(n_waypoints));
    }
    let start = model.clamp_limits(q_start);
    let mut result = inverse_kinematics(model, goal, &start, ik);
    for offset in IK_RESTARTS {
        match result {
            Err(KinematicsError::NotConverged { .. }) => {
                let seed = JointState(std::array::from_fn(|i| start.0[i] + offset[i]));
                result = inverse_kinematics(model, goal, &seed, ik);
            }
            _ => break,
        }
    }
    let q_goal = result?;
    let last = (n_waypoints - 1) as f64;
    let mut waypoints: Vec<JointState> = (0..n_waypoints)
        .map(|i| start.lerp(&q_goal, i as f64 / last))
        .collect();
    // Pin the endpoints exactly; lerp at t = 1 can round.
    waypoints[0] = start;
    waypoints[n_waypoints - 1] = q_goal;
    Ok(Trajectory {
        waypoints,
        goal: *goal,
    })
}

/// Sends every waypoint through the controllers; each command is corrupted
/// by `ctrl_noise` and the arm settles at the clamped result. Only the last
/// realized waypoint determines `final_distance`.
pub fn execute<R: Rng + ?Sized>(
    traj: &Trajectory,
    model: &RobotModel,
    ctrl_noise: &NoiseModel,
    rng: &mut R,
) -> ExecutionLog {
    let commanded = traj.waypoints.clone();
    let realized: Vec<JointState> = commanded
        .iter()
        .map(|c| model.clamp_limits(&ctrl_noise.perturb(c, rng)))
        .collect();
    let ee_trace: Vec<EePose> = realized.iter().map(|q| forward_kinematics(model, q)).collect();
    let final_distance = ee_trace.last().expect("trajectory has waypoints").distance(&traj.goal);
    ExecutionLog {
        commanded,
        realized,
        ee_trace,
        goal: traj.goal,
        final_distance,
    }
}

/// One classical episode: observe the start pose, estimate, plan, execute.
pub fn run_traditional<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    ctrl_noise: &NoiseModel,
    classical: &ClassicalConfig,
    rng: &mut R,
) -> Result<ExecutionLog, ClassicalError> {
    let (_, obs) = reset(cfg, rng)?;
    let q_observed = JointState(obs.q_noisy);
    let _start_pose = estimate_state(&cfg.model, &q_observed);
    let traj = plan_trajectory(&cfg.model, &q_observed, &cfg.goal, classical.n_waypoints, &classical.ik)?;
    Ok(execute(&traj, &cfg.model, ctrl_noise, rng))
}
