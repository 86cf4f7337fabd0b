//! Diagonal Gaussian policy over joint increments.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::env::{Observation, OBS_DIM};
use crate::kinematics::NUM_JOINTS;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `a ~ N(mean_net(obs), diag(exp(log_std))²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: [f64; NUM_JOINTS],
}

impl GaussianPolicy {
    pub fn random<R: Rng + ?Sized>(hidden: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(NUM_JOINTS);
        Self {
            mean_net: Mlp::random(&sizes, 0.01, rng),
            log_std: [init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); NUM_JOINTS],
        }
    }

    pub fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn std(&self) -> [f64; NUM_JOINTS] {
        self.log_std.map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
    }

    pub fn mean(&self, obs: &[f64; OBS_DIM]) -> [f64; NUM_JOINTS] {
        let out = self.mean_net.forward(obs).expect("policy network takes observation-sized input");
        std::array::from_fn(|i| out[i])
    }

    /// Exact log-density of `action` under N(mean, diag(std²)).
    pub fn log_prob_at(&self, mean: &[f64], action: &[f64; NUM_JOINTS]) -> f64 {
        let mut lp = -0.5 * NUM_JOINTS as f64 * (2.0 * PI).ln();
        for j in 0..NUM_JOINTS {
            let log_std = self.log_std[j].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (action[j] - mean[j]) / log_std.exp();
            lp -= 0.5 * z * z + log_std;
        }
        lp
    }

    pub fn log_prob(&self, obs: &Observation, action: &[f64; NUM_JOINTS]) -> f64 {
        self.log_prob_at(&self.mean(&obs.to_vec()), action)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> ([f64; NUM_JOINTS], f64) {
        let mean = self.mean(&obs.to_vec());
        let std = self.std();
        let action = std::array::from_fn(|j| {
            let z: f64 = rng.sample(StandardNormal);
            mean[j] + std[j] * z
        });
        let lp = self.log_prob_at(&mean, &action);
        (action, lp)
    }

    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX) + 0.5 * (1.0 + (2.0 * PI).ln()))
            .sum()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + NUM_JOINTS
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.mean_net.write_flat(out);
        out.extend_from_slice(&self.log_std);
    }

    pub fn read_flat<'a>(&mut self, flat: &'a [f64]) -> &'a [f64] {
        let rest = self.mean_net.read_flat(flat);
        let (s, rest) = rest.split_at(NUM_JOINTS);
        self.log_std.copy_from_slice(s);
        rest
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::EePose;
    use crate::noise::stream_from_seed;

    fn obs() -> Observation {
        Observation {
            q_noisy: [0.2, -0.4, 0.9],
            goal: EePose::new(0.35, 0.45),
            ee_delta_noisy: [0.1, -0.3],
        }
    }

    #[test]
    fn log_prob_at_mean() {
        let p = GaussianPolicy {
            log_std: [-1.0, 0.5, -2.0],
            ..GaussianPolicy::random(&[8], 0.0, &mut stream_from_seed(0))
        };
        let mean = p.mean(&obs().to_vec());
        let expected = -(-1.0 + 0.5 - 2.0) - 1.5 * (2.0 * PI).ln();
        assert!((p.log_prob(&obs(), &mean) - expected).abs() < 1e-12);
    }

    #[test]
    fn vanishing_variance_gives_mean_action() {
        let mut p = GaussianPolicy::random(&[8], -50.0, &mut stream_from_seed(1));
        p.clamp_log_std();
        assert_eq!(p.log_std, [LOG_STD_MIN; 3]);
        let mean = p.mean(&obs().to_vec());
        let mut rng = stream_from_seed(2);
        let mut total = 0.0;
        for _ in 0..100 {
            let (a, _) = p.sample(&obs(), &mut rng);
            for j in 0..3 {
                let dev = (a[j] - mean[j]).abs();
                assert!(dev < 5.0 * LOG_STD_MIN.exp());
                total += dev;
            }
        }
        assert!(total / 300.0 < 1e-2);
    }

    #[test]
    fn entropy_matches_closed_form() {
        let p = GaussianPolicy {
            log_std: [0.0; 3],
            ..GaussianPolicy::random(&[4], 0.0, &mut stream_from_seed(3))
        };
        assert!((p.entropy() - 1.5 * (1.0 + (2.0 * PI).ln())).abs() < 1e-12);
    }
}
