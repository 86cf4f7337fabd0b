use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::mlp::Mlp;
use super::policy::GaussianPolicy;
use super::update::{ppo_update, Optimizer};
use super::{PpoConfig, PpoError};
use crate::env::{reset, step, EnvConfig, Observation, TraceRow, OBS_DIM};
use crate::kinematics::{RobotModel, NUM_JOINTS};
use crate::noise::{derive_stream, RngStream};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
}

/// A policy and its critic, stamped with the robot they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub version: u32,
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub model_digest: String,
    pub train_sigma: [f64; NUM_JOINTS],
    pub total_steps: usize,
    pub curve: Vec<CurvePoint>,
    pub success: bool,
    pub final_mean_distance: f64,
}

impl TrainedPolicy {
    pub fn to_writer<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer(w, self)
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self, String> {
        let p: TrainedPolicy = serde_json::from_reader(r).map_err(|e| e.to_string())?;
        if p.version != ARTIFACT_VERSION {
            return Err(format!(
                "unsupported policy artifact version {} (expected {ARTIFACT_VERSION})",
                p.version
            ));
        }
        if p.policy.mean_net.input_size() != OBS_DIM || p.policy.mean_net.output_size() != NUM_JOINTS {
            return Err("policy network has the wrong input/output size".into());
        }
        Ok(p)
    }

    pub fn matches(&self, model: &RobotModel) -> bool {
        self.model_digest == model.digest()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.policy.mean_net.layer_sizes()
    }
}

/// Anything that maps an observation to a joint increment.
pub trait Controller {
    fn act(&self, obs: &Observation) -> [f64; NUM_JOINTS];
}

/// Deterministic evaluation uses the policy mean.
impl Controller for TrainedPolicy {
    fn act(&self, obs: &Observation) -> [f64; NUM_JOINTS] {
        self.policy.mean(&obs.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean_final_distance: f64,
    pub std_final_distance: f64,
    /// Root mean square of the per-episode tail distances.
    pub rmse: f64,
    pub final_distances: Vec<f64>,
    pub tail_distances: Vec<f64>,
    pub traces: Vec<EpisodeTrace>,
}

/// Runs `n_episodes` with `controller`. Each episode's tail distance is the
/// mean ground-truth distance over its last `tail_window` steps.
pub fn evaluate_controller<C: Controller + ?Sized, R: Rng + ?Sized>(
    controller: &C,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    tail_window: usize,
    rng: &mut R,
) -> Result<EvalStats, PpoError> {
    env_cfg.validate()?;
    let window = tail_window.clamp(1, env_cfg.max_steps);
    let mut final_distances = Vec::with_capacity(n_episodes);
    let mut tail_distances = Vec::with_capacity(n_episodes);
    let mut traces = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let (mut state, mut obs) = reset(env_cfg, rng)?;
        let mut rows = Vec::with_capacity(env_cfg.max_steps + 1);
        rows.push(TraceRow::from_step(env_cfg, &state, &obs, 0.0));
        let mut distances = Vec::with_capacity(env_cfg.max_steps);
        while !state.done {
            let action = controller.act(&obs);
            let (next, result) = step(&state, env_cfg, &action, rng)?;
            state = next;
            obs = result.obs;
            distances.push(result.info_distance);
            rows.push(TraceRow::from_step(env_cfg, &state, &obs, result.reward));
        }
        let tail = &distances[distances.len() - window..];
        tail_distances.push(tail.iter().sum::<f64>() / tail.len() as f64);
        final_distances.push(*distances.last().expect("at least one step"));
        traces.push(EpisodeTrace { rows });
    }
    let n = n_episodes.max(1) as f64;
    let mean = final_distances.iter().sum::<f64>() / n;
    let var = final_distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let rmse = (tail_distances.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    Ok(EvalStats {
        mean_final_distance: mean,
        std_final_distance: var.sqrt(),
        rmse,
        final_distances,
        tail_distances,
        traces,
    })
}

/// Evaluates a trained policy on `env_cfg`, refusing if the robot changed
/// since training.
pub fn evaluate<R: Rng + ?Sized>(
    policy: &TrainedPolicy,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    tail_window: usize,
    rng: &mut R,
) -> Result<EvalStats, PpoError> {
    if !policy.matches(&env_cfg.model) {
        return Err(PpoError::DigestMismatch {
            policy: policy.model_digest.clone(),
            robot: env_cfg.model.digest().to_string(),
        });
    }
    evaluate_controller(policy, env_cfg, n_episodes, tail_window, rng)
}

struct Rollout<'a> {
    cfg: &'a EnvConfig,
    rng: RngStream,
    state: crate::env::EnvState,
    obs: Observation,
    episode_reward: f64,
}

/// Alternates rollouts of `steps_per_update` transitions with PPO updates
/// until `total_steps`, then runs a deterministic evaluation to decide
/// success. A policy that misses the threshold is returned inside
/// [`PpoError::TrainingFailed`].
pub fn train<R: Rng + ?Sized>(
    env_cfg: &EnvConfig,
    ppo_cfg: &PpoConfig,
    rng: &mut R,
) -> Result<TrainedPolicy, PpoError> {
    env_cfg.validate()?;
    ppo_cfg.validate()?;
    let seed: u64 = rng.random();
    let mut init_rng = derive_stream(seed, 0);
    let mut update_rng = derive_stream(seed, 1);
    let mut eval_rng = derive_stream(seed, 3);

    let mut policy = GaussianPolicy::random(&ppo_cfg.hidden_sizes, ppo_cfg.init_log_std, &mut init_rng);
    let mut value_sizes = vec![OBS_DIM];
    value_sizes.extend_from_slice(&ppo_cfg.hidden_sizes);
    value_sizes.push(1);
    let mut value = Mlp::random(&value_sizes, 1.0, &mut init_rng);
    let mut optimizer = Optimizer::from_config(ppo_cfg);

    let mut env_rng = derive_stream(seed, 2);
    let (state, obs) = reset(env_cfg, &mut env_rng)?;
    let mut rollout = Rollout {
        cfg: env_cfg,
        rng: env_rng,
        state,
        obs,
        episode_reward: 0.0,
    };

    let mut curve = Vec::new();
    let mut steps_done = 0;
    let mut buffer = RolloutBuffer::with_capacity(ppo_cfg.steps_per_update);
    while steps_done < ppo_cfg.total_steps {
        let n = ppo_cfg.steps_per_update.min(ppo_cfg.total_steps - steps_done);
        buffer = RolloutBuffer::with_capacity(n);
        let mut finished = Vec::new();
        for _ in 0..n {
            let x = rollout.obs.to_vec();
            let (action, log_prob) = policy.sample(&rollout.obs, &mut update_rng);
            let v = value.forward(&x)?[0];
            let (next, result) = step(&rollout.state, rollout.cfg, &action, &mut rollout.rng)?;
            buffer.push(x, action, log_prob, result.reward, v, result.done);
            rollout.episode_reward += result.reward;
            if result.done {
                finished.push(rollout.episode_reward);
                rollout.episode_reward = 0.0;
                let (s, o) = reset(rollout.cfg, &mut rollout.rng)?;
                rollout.state = s;
                rollout.obs = o;
            } else {
                rollout.state = next;
                rollout.obs = result.obs;
            }
        }
        steps_done += n;
        let bootstrap = value.forward(&rollout.obs.to_vec())?[0];
        buffer.gae(ppo_cfg.gamma, ppo_cfg.lambda, bootstrap)?;
        buffer.normalize_advantages();
        ppo_update(&mut policy, &mut value, &buffer, ppo_cfg, &mut optimizer, &mut update_rng)?;
        if !finished.is_empty() {
            curve.push(CurvePoint {
                step: steps_done,
                mean_reward: finished.iter().sum::<f64>() / finished.len() as f64,
            });
        }
    }
    drop(buffer);

    let mut trained = TrainedPolicy {
        version: ARTIFACT_VERSION,
        policy,
        value,
        model_digest: env_cfg.model.digest().to_string(),
        train_sigma: env_cfg.obs_noise.sigma(),
        total_steps: steps_done,
        curve,
        success: false,
        final_mean_distance: f64::NAN,
    };
    let stats = evaluate(&trained, env_cfg, ppo_cfg.eval_episodes.max(1), 1, &mut eval_rng)?;
    trained.final_mean_distance = stats.mean_final_distance;
    trained.success = steps_done > 0 && stats.mean_final_distance <= ppo_cfg.success_threshold;
    if trained.success {
        Ok(trained)
    } else {
        Err(PpoError::TrainingFailed {
            mean_final_distance: stats.mean_final_distance,
            threshold: ppo_cfg.success_threshold,
            policy: Box::new(trained),
        })
    }
}
