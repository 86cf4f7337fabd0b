//! Seeded per-joint Gaussian perturbation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{JointState, NUM_JOINTS};

/// Random stream used throughout the simulator. ChaCha output is specified
/// independently of platform word size, so a seed fixes the sequence.
pub type RngStream = ChaCha8Rng;

pub fn stream_from_seed(seed: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for worker (or job) `index` under a common seed.
pub fn derive_stream(seed: u64, index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("noise sigma must be finite and non-negative, got {0:?}")]
    InvalidSigma([f64; NUM_JOINTS]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSpec {
    sigma: [f64; NUM_JOINTS],
    #[serde(default)]
    seed: u64,
}

/// Zero-mean Gaussian noise with a per-joint standard deviation (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseSpec", into = "NoiseSpec")]
pub struct NoiseModel {
    sigma: [f64; NUM_JOINTS],
    seed: u64,
}

impl TryFrom<NoiseSpec> for NoiseModel {
    type Error = NoiseError;

    fn try_from(spec: NoiseSpec) -> Result<Self, Self::Error> {
        NoiseModel::new(spec.sigma, spec.seed)
    }
}

impl From<NoiseModel> for NoiseSpec {
    fn from(n: NoiseModel) -> Self {
        NoiseSpec {
            sigma: n.sigma,
            seed: n.seed,
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseModel {
    pub fn new(sigma: [f64; NUM_JOINTS], seed: u64) -> Result<Self, NoiseError> {
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(NoiseError::InvalidSigma(sigma));
        }
        Ok(Self { sigma, seed })
    }

    /// Same σ on every joint.
    pub fn uniform(sigma: f64, seed: u64) -> Result<Self, NoiseError> {
        Self::new([sigma; NUM_JOINTS], seed)
    }

    pub fn none() -> Self {
        Self {
            sigma: [0.0; NUM_JOINTS],
            seed: 0,
        }
    }

    pub fn sigma(&self) -> [f64; NUM_JOINTS] {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma.iter().all(|s| *s == 0.0)
    }

    pub fn stream(&self) -> RngStream {
        stream_from_seed(self.seed)
    }

    pub fn worker_stream(&self, worker: u64) -> RngStream {
        derive_stream(self.seed, worker)
    }

    /// Returns `q + ε` with `εᵢ ~ N(0, σᵢ)`. Always draws one normal per joint,
    /// so stream alignment does not depend on σ.
    pub fn perturb<R: Rng + ?Sized>(&self, q: &JointState, rng: &mut R) -> JointState {
        let mut out = q.0;
        for (a, s) in out.iter_mut().zip(self.sigma) {
            let z: f64 = rng.sample(StandardNormal);
            *a += s * z;
        }
        JointState(out)
    }
}
