//! Bandit environments.
//!
//! An environment hands out one [`Round`] at a time (the target user and the
//! candidate arm features) and reveals only the played arm's reward through
//! [`Environment::play`]. The per-round regret against the best arm in the
//! set is returned alongside for bookkeeping; policies never see it.

mod kmeans;
mod perturbed;
mod ratings;
mod svd;
mod synthetic;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::UserId;
use crate::error::Result;

pub use kmeans::{kmeans, KMeansResult};
pub use perturbed::{gen_perturbed, BaseFeatures, PerturbedEnv, PerturbedSpec};
pub use ratings::{ingest_ratings, DatasetEnv, IngestOptions, RatingsDataset};
pub use svd::{truncated_svd, SparseMatrix, TruncatedSvd};
pub use synthetic::{gen_piecewise, PiecewiseEnv, SyntheticEnvSpec};

/// What the policy sees at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    /// 1-based round index.
    pub t: usize,
    pub user: UserId,
    pub arms: Vec<Vec<f64>>,
}

/// Feedback for the played arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    /// Gap between the best arm's expected reward and the played arm's.
    pub regret: f64,
}

pub trait Environment {
    /// Arm feature dimension.
    fn dim(&self) -> usize;

    /// The next round, or `None` once the horizon is exhausted.
    fn next_round(&mut self) -> Option<Round>;

    /// Plays `arm` in the current round.
    fn play(&mut self, arm: usize) -> Result<Outcome>;
}

/// Nonlinear ground-truth reward families mapping `(x, theta)` into `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFamily {
    /// `0.5 * (1 + cos(3 x.theta))`
    #[default]
    Cosine,
    /// `(x.theta)^2`, in `[0, 1]` for unit vectors.
    Quadratic,
}

impl RewardFamily {
    pub fn eval(self, x: &[f64], theta: &[f64]) -> f64 {
        let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        let g = match self {
            RewardFamily::Cosine => 0.5 * (1.0 + (3.0 * z).cos()),
            RewardFamily::Quadratic => z * z,
        };
        g.clamp(0.0, 1.0)
    }
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub(crate) fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|x: &f64| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to `v` and re-normalizes it; returns the noise drawn.
pub fn perturb_unit<R: Rng>(v: &mut [f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let noise: Vec<f64> = (0..v.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect();
    if sigma > 0.0 {
        v.iter_mut().zip(&noise).for_each(|(x, e)| *x += e);
        normalize(v);
    }
    noise
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
