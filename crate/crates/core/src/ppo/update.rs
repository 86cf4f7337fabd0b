//! Clipped-surrogate objective, its gradient, and the parameter update.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::mlp::{Activations, Mlp};
use super::policy::{GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
use super::{PpoConfig, PpoError};
use crate::kinematics::NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Gradient ascent on a flat parameter vector with global-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    max_grad_norm: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, max_grad_norm: f64) -> Self {
        Self {
            kind,
            learning_rate,
            max_grad_norm,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn from_config(cfg: &PpoConfig) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate, cfg.max_grad_norm)
    }

    /// Clips `grad` to the configured norm, then moves `params` uphill.
    /// Returns the pre-clip gradient norm.
    pub fn ascend(&mut self, params: &mut [f64], grad: &mut [f64]) -> f64 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if self.max_grad_norm > 0.0 && norm > self.max_grad_norm {
            let s = self.max_grad_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad.iter()) {
                    *p += self.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] += self.learning_rate * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
        norm
    }
}

/// Value and gradient of the PPO objective on a minibatch.
#[derive(Debug, Clone)]
pub struct PpoGradient {
    /// Same shape as the policy; holds ∂L/∂θ.
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub objective: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Default)]
pub struct Scratch {
    policy: Activations,
    value: Activations,
}

/// Clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)` for one transition.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// Mean clipped surrogate over the whole buffer under `policy`.
pub fn surrogate_objective(policy: &GaussianPolicy, buffer: &RolloutBuffer, epsilon: f64) -> f64 {
    let n = buffer.len();
    (0..n)
        .map(|t| {
            let mean = policy.mean(&buffer.observations[t]);
            let ratio = (policy.log_prob_at(&mean, &buffer.actions[t]) - buffer.log_probs[t]).exp();
            clipped_surrogate(ratio, buffer.advantages[t], epsilon)
        })
        .sum::<f64>()
        / n as f64
}

/// L = mean[min(r·A, clip(r)·A) − c_v·(v − R)²] + c_e·H and its gradient.
pub fn ppo_gradient(
    policy: &GaussianPolicy,
    value: &Mlp,
    buffer: &RolloutBuffer,
    indices: &[usize],
    cfg: &PpoConfig,
    scratch: &mut Scratch,
) -> PpoGradient {
    let b = indices.len() as f64;
    let mut gp = GaussianPolicy {
        mean_net: policy.mean_net.zeros_like(),
        log_std: [0.0; NUM_JOINTS],
    };
    let mut gv = value.zeros_like();
    let log_std = policy.log_std.map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let var = log_std.map(|s| (2.0 * s).exp());
    let (mut surrogate, mut value_loss, mut clipped, mut kl) = (0.0, 0.0, 0usize, 0.0);

    for &t in indices {
        let obs = &buffer.observations[t];
        let action = &buffer.actions[t];
        let adv = buffer.advantages[t];

        let mean: [f64; NUM_JOINTS] = {
            let out = policy.mean_net.forward_cached(obs, &mut scratch.policy);
            std::array::from_fn(|j| out[j])
        };
        let log_ratio = policy.log_prob_at(&mean, action) - buffer.log_probs[t];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let clipped_term = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv;
        surrogate += unclipped.min(clipped_term);
        kl += (ratio - 1.0) - log_ratio;
        // Gradient flows through the ratio only when the unclipped term is the minimum.
        let d_logp = if unclipped <= clipped_term {
            ratio * adv / b
        } else {
            clipped += 1;
            0.0
        };
        if d_logp != 0.0 {
            let mut upstream = [0.0; NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                let diff = action[j] - mean[j];
                upstream[j] = d_logp * diff / var[j];
                gp.log_std[j] += d_logp * (diff * diff / var[j] - 1.0);
            }
            policy.mean_net.backward(&mut scratch.policy, &upstream, &mut gp.mean_net);
        }

        let v = value.forward_cached(obs, &mut scratch.value)[0];
        let err = v - buffer.returns[t];
        value_loss += err * err;
        value.backward(&mut scratch.value, &[-2.0 * cfg.value_coef * err / b], &mut gv);
    }
    let entropy = policy.entropy();
    for g in &mut gp.log_std {
        *g += cfg.entropy_coef;
    }
    surrogate /= b;
    value_loss /= b;
    PpoGradient {
        policy: gp,
        value: gv,
        objective: surrogate - cfg.value_coef * value_loss + cfg.entropy_coef * entropy,
        surrogate,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 / b,
        approx_kl: kl / b,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateDiagnostics {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Several epochs of minibatch ascent on the clipped objective. The buffer
/// must already hold (normalized) advantages and returns.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    optimizer: &mut Optimizer,
    rng: &mut R,
) -> Result<UpdateDiagnostics, PpoError> {
    if !buffer.has_advantages() {
        return Err(PpoError::EmptyBuffer);
    }
    let mut indices: Vec<usize> = (0..buffer.len()).collect();
    let mut scratch = Scratch::default();
    let mut diag = UpdateDiagnostics::default();
    let mut params = Vec::with_capacity(policy.num_params() + value.num_params());
    let mut grads = Vec::with_capacity(params.capacity());
    let minibatch = cfg.minibatch_size.max(1);

    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(minibatch) {
            let g = ppo_gradient(policy, value, buffer, chunk, cfg, &mut scratch);
            if !g.objective.is_finite() {
                return Err(PpoError::NonFiniteLoss {
                    surrogate: g.surrogate,
                    value_loss: g.value_loss,
                    entropy: g.entropy,
                });
            }
            params.clear();
            policy.write_flat(&mut params);
            value.write_flat(&mut params);
            grads.clear();
            g.policy.write_flat(&mut grads);
            g.value.write_flat(&mut grads);
            let norm = optimizer.ascend(&mut params, &mut grads);
            let rest = policy.read_flat(&params);
            value.read_flat(rest);
            policy.clamp_log_std();

            diag.surrogate += g.surrogate;
            diag.value_loss += g.value_loss;
            diag.entropy += g.entropy;
            diag.clip_fraction += g.clip_fraction;
            diag.approx_kl += g.approx_kl;
            diag.grad_norm += norm;
            diag.minibatches += 1;
        }
    }
    if diag.minibatches > 0 {
        let n = diag.minibatches as f64;
        diag.surrogate /= n;
        diag.value_loss /= n;
        diag.entropy /= n;
        diag.clip_fraction /= n;
        diag.approx_kl /= n;
        diag.grad_norm /= n;
    }
    if !(policy.mean_net.is_finite() && value.is_finite()) {
        return Err(PpoError::NonFiniteLoss {
            surrogate: diag.surrogate,
            value_loss: diag.value_loss,
            entropy: diag.entropy,
        });
    }
    Ok(diag)
}
