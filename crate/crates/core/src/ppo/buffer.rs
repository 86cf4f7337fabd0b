use crate::env::OBS_DIM;
use crate::kinematics::NUM_JOINTS;

use super::PpoError;

/// Transitions from one rollout, plus advantages and returns once
/// [`RolloutBuffer::gae`] has run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<[f64; NUM_JOINTS]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// `dones[t]` marks that the episode ended with transition `t`.
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            observations: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(
        &mut self,
        obs: [f64; OBS_DIM],
        action: [f64; NUM_JOINTS],
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) {
        self.observations.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn has_advantages(&self) -> bool {
        !self.is_empty() && self.advantages.len() == self.len() && self.returns.len() == self.len()
    }

    /// Generalized advantage estimation, backwards over the buffer:
    /// δₜ = rₜ + γ·vₜ₊₁·(1−doneₜ) − vₜ and Aₜ = δₜ + γλ·(1−doneₜ)·Aₜ₊₁,
    /// with `bootstrap_value` standing in for the value after the last step.
    pub fn gae(&mut self, gamma: f64, lambda: f64, bootstrap_value: f64) -> Result<(), PpoError> {
        let n = self.len();
        if n == 0 {
            return Err(PpoError::EmptyBuffer);
        }
        self.advantages = vec![0.0; n];
        let mut next_value = bootstrap_value;
        let mut next_adv = 0.0;
        for t in (0..n).rev() {
            let live = if self.dones[t] { 0.0 } else { 1.0 };
            let delta = self.rewards[t] + gamma * next_value * live - self.values[t];
            next_adv = delta + gamma * lambda * live * next_adv;
            self.advantages[t] = next_adv;
            next_value = self.values[t];
        }
        self.returns = self.advantages.iter().zip(&self.values).map(|(a, v)| a + v).collect();
        Ok(())
    }

    /// Shifts and scales advantages to zero mean and unit standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n < 2 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        for a in &mut self.advantages {
            *a = (*a - mean) / std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer(rewards: &[f64], values: &[f64], dones: &[bool]) -> RolloutBuffer {
        let mut b = RolloutBuffer::default();
        for i in 0..rewards.len() {
            b.push([0.0; OBS_DIM], [0.0; 3], 0.0, rewards[i], values[i], dones[i]);
        }
        b
    }

    #[test]
    fn empty_buffer_is_an_error() {
        assert_eq!(RolloutBuffer::default().gae(0.99, 0.95, 0.0), Err(PpoError::EmptyBuffer));
    }

    #[test]
    fn hand_computed_length_four() {
        // γ = 0.5, λ = 0.5, bootstrap 2, episode boundary after t = 1.
        let mut b = buffer(&[1.0, 2.0, 0.0, -1.0], &[0.5, 1.0, 0.0, 1.0], &[false, true, false, false]);
        b.gae(0.5, 0.5, 2.0).unwrap();
        // δ3 = -1 + 0.5*2 - 1 = -1;       A3 = -1
        // δ2 = 0 + 0.5*1 - 0 = 0.5;        A2 = 0.5 + 0.25*(-1) = 0.25
        // δ1 = 2 + 0 - 1 = 1 (terminal);   A1 = 1
        // δ0 = 1 + 0.5*1 - 0.5 = 1;        A0 = 1 + 0.25*1 = 1.25
        assert_eq!(b.advantages, vec![1.25, 1.0, 0.25, -1.0]);
        assert_eq!(b.returns, vec![1.75, 2.0, 0.25, 0.0]);
    }

    #[test]
    fn normalization_moments() {
        let mut b = buffer(&[1.0, 5.0, -2.0, 0.3, 8.0], &[0.0; 5], &[false; 5]);
        b.gae(0.9, 0.8, 0.0).unwrap();
        b.normalize_advantages();
        let n = b.advantages.len() as f64;
        let mean = b.advantages.iter().sum::<f64>() / n;
        let sd = (b.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-6);
        assert!((sd - 1.0).abs() <= 1e-3);
    }
}
