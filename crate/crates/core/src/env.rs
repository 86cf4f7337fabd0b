//! Episodic reaching task shared by both control pipelines.
//!
//! The arm tracks bounded joint-position increments instantly. Reward and
//! the reported distance use the true joint state; only observations carry
//! noise, redrawn on every step.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::fmt6;
use crate::kinematics::{forward_kinematics, is_reachable, EePose, JointState, RobotModel, NUM_JOINTS};
use crate::noise::NoiseModel;

pub const OBS_DIM: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("step called on a finished episode (step {0})")]
    EpisodeOver(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub model: RobotModel,
    pub goal: EePose,
    pub obs_noise: NoiseModel,
    pub max_steps: usize,
    /// Per-step bound on each joint increment, rad.
    pub action_clip: f64,
    pub success_radius: f64,
    pub randomize_start: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            model: RobotModel::default(),
            goal: EePose::new(0.35, 0.45),
            obs_noise: NoiseModel::none(),
            max_steps: 100,
            action_clip: 0.05,
            success_radius: 0.01,
            randomize_start: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !is_reachable(&self.model, &self.goal) {
            return Err(EnvError::InvalidConfig(format!(
                "goal ({}, {}) is not reachable by the arm",
                self.goal.x, self.goal.y
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !(self.action_clip.is_finite() && self.action_clip > 0.0) {
            return Err(EnvError::InvalidConfig("action_clip must be positive".into()));
        }
        if !(self.success_radius.is_finite() && self.success_radius >= 0.0) {
            return Err(EnvError::InvalidConfig("success_radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_noise_sigma(&self, sigma: f64) -> Self {
        let obs_noise = NoiseModel::uniform(sigma, self.obs_noise.seed()).expect("sigma validated by caller");
        Self {
            obs_noise,
            ..self.clone()
        }
    }

    pub fn distance(&self, q: &JointState) -> f64 {
        forward_kinematics(&self.model, q).distance(&self.goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub q_true: JointState,
    pub step_index: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub q_noisy: [f64; NUM_JOINTS],
    pub goal: EePose,
    /// FK(q_noisy) − goal.
    pub ee_delta_noisy: [f64; 2],
}

impl Observation {
    pub fn to_vec(&self) -> [f64; OBS_DIM] {
        let q = self.q_noisy;
        [
            q[0],
            q[1],
            q[2],
            self.goal.x,
            self.goal.y,
            self.ee_delta_noisy[0],
            self.ee_delta_noisy[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    /// Ground-truth ‖FK(q_true) − goal‖.
    pub info_distance: f64,
}

fn observe<R: Rng + ?Sized>(cfg: &EnvConfig, q_true: &JointState, rng: &mut R) -> Observation {
    let q_noisy = cfg.obs_noise.perturb(q_true, rng);
    let p = forward_kinematics(&cfg.model, &q_noisy);
    Observation {
        q_noisy: q_noisy.0,
        goal: cfg.goal,
        ee_delta_noisy: [p.x - cfg.goal.x, p.y - cfg.goal.y],
    }
}

pub fn reset<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<(EnvState, Observation), EnvError> {
    cfg.validate()?;
    let q_true = if cfg.randomize_start {
        let limits = cfg.model.joint_limits();
        JointState(std::array::from_fn(|i| rng.random_range(limits[i][0]..=limits[i][1])))
    } else {
        JointState::HOME
    };
    let state = EnvState {
        q_true,
        step_index: 0,
        done: false,
    };
    let obs = observe(cfg, &q_true, rng);
    Ok((state, obs))
}

pub fn step<R: Rng + ?Sized>(
    state: &EnvState,
    cfg: &EnvConfig,
    action: &[f64; NUM_JOINTS],
    rng: &mut R,
) -> Result<(EnvState, StepResult), EnvError> {
    if state.done || state.step_index >= cfg.max_steps {
        return Err(EnvError::EpisodeOver(state.step_index));
    }
    let mut q = state.q_true.0;
    for (qi, a) in q.iter_mut().zip(action) {
        // NaN actions are treated as no-ops.
        let a = if a.is_nan() { 0.0 } else { a.clamp(-cfg.action_clip, cfg.action_clip) };
        *qi += a;
    }
    let q_true = cfg.model.clamp_limits(&JointState(q));
    let step_index = state.step_index + 1;
    let done = step_index >= cfg.max_steps;
    let next = EnvState {
        q_true,
        step_index,
        done,
    };
    let obs = observe(cfg, &q_true, rng);
    Ok((
        next,
        StepResult {
            obs,
            reward: reward(&next, cfg),
            done,
            info_distance: cfg.distance(&q_true),
        },
    ))
}

/// Negative ground-truth distance plus a unit bonus inside the success radius.
pub fn reward(state: &EnvState, cfg: &EnvConfig) -> f64 {
    let d = cfg.distance(&state.q_true);
    let bonus = if d <= cfg.success_radius { 1.0 } else { 0.0 };
    -d + bonus
}

/// One row of an episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub q_true: [f64; NUM_JOINTS],
    pub q_noisy: [f64; NUM_JOINTS],
    pub ee: EePose,
    pub reward: f64,
    pub distance: f64,
}

impl TraceRow {
    pub const HEADER: &'static str = "step,q_true_0,q_true_1,q_true_2,q_noisy_0,q_noisy_1,q_noisy_2,ee_x,ee_y,reward,distance";

    pub fn from_step(cfg: &EnvConfig, state: &EnvState, obs: &Observation, reward: f64) -> Self {
        Self {
            step: state.step_index,
            q_true: state.q_true.0,
            q_noisy: obs.q_noisy,
            ee: forward_kinematics(&cfg.model, &state.q_true),
            reward,
            distance: cfg.distance(&state.q_true),
        }
    }
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> io::Result<()> {
    writeln!(w, "{}", TraceRow::HEADER)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            fmt6(r.q_true[0]),
            fmt6(r.q_true[1]),
            fmt6(r.q_true[2]),
            fmt6(r.q_noisy[0]),
            fmt6(r.q_noisy[1]),
            fmt6(r.q_noisy[2]),
            fmt6(r.ee.x),
            fmt6(r.ee.y),
            fmt6(r.reward),
            fmt6(r.distance)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::stream_from_seed;

    #[test]
    fn noiseless_reset() {
        let cfg = EnvConfig::default();
        let (state, obs) = reset(&cfg, &mut stream_from_seed(0)).unwrap();
        assert_eq!(state.q_true, JointState::HOME);
        assert_eq!(obs.q_noisy, [0.0; 3]);
        let p = forward_kinematics(&cfg.model, &JointState::HOME);
        assert_eq!(obs.ee_delta_noisy, [p.x - cfg.goal.x, p.y - cfg.goal.y]);
    }

    #[test]
    fn unreachable_goal_is_invalid() {
        let cfg = EnvConfig {
            goal: EePose::new(2.0, 0.0),
            ..EnvConfig::default()
        };
        assert!(matches!(
            reset(&cfg, &mut stream_from_seed(0)),
            Err(EnvError::InvalidConfig(_))
        ));
        let cfg = EnvConfig {
            max_steps: 0,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig::default().with_noise_sigma(0.3);
        let a = reset(&cfg, &mut stream_from_seed(9)).unwrap();
        let b = reset(&cfg, &mut stream_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn null_action_changes_nothing() {
        let cfg = EnvConfig::default();
        let mut rng = stream_from_seed(1);
        let (s0, _) = reset(&cfg, &mut rng).unwrap();
        let (s1, r) = step(&s0, &cfg, &[0.0; 3], &mut rng).unwrap();
        assert_eq!(s1.q_true, s0.q_true);
        assert_eq!(r.info_distance, cfg.distance(&s0.q_true));
        assert_eq!(s1.step_index, 1);
    }

    #[test]
    fn oversized_action_is_clipped() {
        let cfg = EnvConfig::default();
        let mut rng = stream_from_seed(1);
        let (s0, _) = reset(&cfg, &mut rng).unwrap();
        let (a, _) = step(&s0, &cfg, &[1.0, -3.0, 0.02], &mut rng).unwrap();
        let (b, _) = step(&s0, &cfg, &[0.05, -0.05, 0.02], &mut rng).unwrap();
        assert_eq!(a.q_true, b.q_true);
    }

    #[test]
    fn reward_definition() {
        let cfg = EnvConfig::default();
        let q = JointState([0.9, -0.4, 0.7]);
        let at_goal = EnvConfig {
            goal: forward_kinematics(&cfg.model, &q),
            ..cfg.clone()
        };
        let s = EnvState {
            q_true: q,
            step_index: 0,
            done: false,
        };
        assert_eq!(reward(&s, &at_goal), 1.0);
        // Home sits at (0.9, 0); a goal 0.5 m away along y.
        let far = EnvConfig {
            goal: EePose::new(0.9, 0.5),
            ..cfg
        };
        let home = EnvState {
            q_true: JointState::HOME,
            ..s
        };
        assert!((reward(&home, &far) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn episode_ends_at_max_steps() {
        let cfg = EnvConfig {
            max_steps: 3,
            ..EnvConfig::default()
        };
        let mut rng = stream_from_seed(2);
        let (mut s, _) = reset(&cfg, &mut rng).unwrap();
        for i in 0..3 {
            let (n, r) = step(&s, &cfg, &[0.01; 3], &mut rng).unwrap();
            assert_eq!(r.done, i == 2);
            s = n;
        }
        assert_eq!(step(&s, &cfg, &[0.0; 3], &mut rng), Err(EnvError::EpisodeOver(3)));
    }

    #[test]
    fn trace_csv_layout() {
        let cfg = EnvConfig::default();
        let mut rng = stream_from_seed(0);
        let (s, obs) = reset(&cfg, &mut rng).unwrap();
        let row = TraceRow::from_step(&cfg, &s, &obs, 0.0);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 11);
        assert!(lines[1].starts_with("0,0,0,0,0,0,0,0.9,0,0,"));
    }

    #[test]
    fn config_round_trip() {
        let cfg = EnvConfig::default().with_noise_sigma(0.1);
        let text = toml::to_string(&cfg).unwrap();
        let back: EnvConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
