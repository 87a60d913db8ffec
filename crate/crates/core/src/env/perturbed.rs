use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{argmax, perturb_unit, unit_vector, Environment, Outcome, RewardFamily, Round};
use crate::clustering::UserId;
use crate::error::{Error, Result};

/// Unit-norm user and item feature vectors of equal dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseFeatures {
    pub users: Vec<Vec<f64>>,
    pub items: Vec<Vec<f64>>,
}

impl BaseFeatures {
    /// Users and items drawn uniformly on the unit sphere.
    pub fn random(n_users: usize, n_items: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..n_users).map(|_| unit_vector(dim, &mut rng)).collect();
        let items = (0..n_items).map(|_| unit_vector(dim, &mut rng)).collect();
        Self { users, items }
    }

    /// Users drawn around `groups` random centres so that preferences are clustered.
    pub fn grouped(n_users: usize, n_items: usize, dim: usize, groups: usize, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres: Vec<Vec<f64>> = (0..groups.max(1)).map(|_| unit_vector(dim, &mut rng)).collect();
        let users = (0..n_users)
            .map(|u| {
                let mut v = centres[u % centres.len()].clone();
                perturb_unit(&mut v, spread, &mut rng);
                v
            })
            .collect();
        let items = (0..n_items).map(|_| unit_vector(dim, &mut rng)).collect();
        Self { users, items }
    }

    fn validate(&self) -> Result<usize> {
        let dim = self
            .users
            .first()
            .map(Vec::len)
            .ok_or(Error::Empty("user features"))?;
        if self.items.is_empty() {
            return Err(Error::Empty("item features"));
        }
        if self.users.iter().chain(&self.items).any(|v| v.len() != dim) {
            return Err(Error::InvalidParameter("feature dimensions differ".into()));
        }
        Ok(dim)
    }
}

/// Schedule and reward model of the perturbed environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbedSpec {
    /// Rounds between perturbations of the stored user features.
    pub period: usize,
    /// Standard deviation of the per-coordinate perturbation noise.
    pub sigma: f64,
    /// Standard deviation of the reward noise.
    pub noise_sigma: f64,
    pub arms: usize,
    pub rounds: usize,
    pub family: RewardFamily,
    pub seed: u64,
}

impl Default for PerturbedSpec {
    fn default() -> Self {
        Self {
            period: 200,
            sigma: 0.1,
            noise_sigma: 0.05,
            arms: 10,
            rounds: 10_000,
            family: RewardFamily::Cosine,
            seed: 0,
        }
    }
}

/// Users' preference vectors drift by a Gaussian kick every `period` rounds.
///
/// Arms are `[user features ; item features]` for `K` distinct items drawn
/// per round. The expected reward of item `j` for user `u` is
/// `family(item_j, user_u)` under the current (perturbed) user vector.
pub struct PerturbedEnv {
    spec: PerturbedSpec,
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    t: usize,
    current: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn gen_perturbed(base: BaseFeatures, spec: PerturbedSpec) -> Result<PerturbedEnv> {
    base.validate()?;
    if spec.period == 0 {
        return Err(Error::InvalidParameter("perturbation period must be >= 1".into()));
    }
    if !(spec.sigma >= 0.0 && spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter("noise levels must be >= 0".into()));
    }
    if spec.arms < 2 || spec.arms > base.items.len() {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= arms <= items ({}), got {}",
            base.items.len(),
            spec.arms
        )));
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(PerturbedEnv {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        spec,
        users: base.users,
        items: base.items,
        noise,
        t: 0,
        current: None,
    })
}

impl PerturbedEnv {
    pub fn spec(&self) -> &PerturbedSpec {
        &self.spec
    }

    /// Current (possibly perturbed) user feature vectors.
    pub fn user_features(&self) -> &[Vec<f64>] {
        &self.users
    }

    pub fn true_mean(&self, user: UserId, item: usize) -> f64 {
        self.spec.family.eval(&self.items[item], &self.users[user as usize])
    }
}

impl Environment for PerturbedEnv {
    fn dim(&self) -> usize {
        2 * self.items[0].len()
    }

    fn next_round(&mut self) -> Option<Round> {
        if self.t >= self.spec.rounds {
            return None;
        }
        self.t += 1;
        // features change at the start of rounds period+1, 2*period+1, ...
        if self.t > 1 && (self.t - 1).is_multiple_of(self.spec.period) && self.spec.sigma > 0.0 {
            for u in &mut self.users {
                perturb_unit(u, self.spec.sigma, &mut self.rng);
            }
        }
        let user = self.rng.random_range(0..self.users.len()) as UserId;
        let picks = index::sample(&mut self.rng, self.items.len(), self.spec.arms).into_vec();
        let uf = &self.users[user as usize];
        let arms: Vec<Vec<f64>> = picks
            .iter()
            .map(|&j| uf.iter().chain(&self.items[j]).copied().collect())
            .collect();
        let means: Vec<f64> = picks.iter().map(|&j| self.true_mean(user, j)).collect();
        let rewards = means
            .iter()
            .map(|m| {
                let xi = if self.spec.noise_sigma > 0.0 {
                    self.noise.sample(&mut self.rng)
                } else {
                    0.0
                };
                (m + xi).clamp(0.0, 1.0)
            })
            .collect();
        self.current = Some((means, rewards));
        Some(Round { t: self.t, user, arms })
    }

    fn play(&mut self, arm: usize) -> Result<Outcome> {
        let (means, rewards) = self.current.as_ref().ok_or(Error::Empty("no active round"))?;
        if arm >= means.len() {
            return Err(Error::InvalidParameter(format!("arm {arm} out of range")));
        }
        Ok(Outcome {
            reward: rewards[arm],
            regret: means[argmax(means)] - means[arm],
        })
    }
}
