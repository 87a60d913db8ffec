use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{argmax, unit_vector, Environment, Outcome, RewardFamily, Round};
use crate::clustering::UserId;
use crate::error::{Error, Result};

/// Piecewise-stationary synthetic environment description.
///
/// `change_points` lists the rounds `tau_1 < ... < tau_S` at which every
/// user's hidden parameter is redrawn; piece `s` covers `[tau_s, tau_{s+1})`
/// with `tau_0 = 1` and `tau_{S+1} = T + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticEnvSpec {
    pub n_users: usize,
    pub dim: usize,
    pub arms: usize,
    pub rounds: usize,
    pub change_points: Vec<usize>,
    pub noise_sigma: f64,
    pub family: RewardFamily,
    pub seed: u64,
}

impl Default for SyntheticEnvSpec {
    fn default() -> Self {
        Self {
            n_users: 10,
            dim: 8,
            arms: 10,
            rounds: 10_000,
            change_points: vec![2_500, 5_000, 7_500],
            noise_sigma: 0.05,
            family: RewardFamily::Cosine,
            seed: 0,
        }
    }
}

impl SyntheticEnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.dim == 0 || self.rounds == 0 {
            return Err(Error::InvalidParameter("users, dim and rounds must be >= 1".into()));
        }
        if self.arms < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 arms, got {}", self.arms)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise sigma {}", self.noise_sigma)));
        }
        let mut prev = 1;
        for &tau in &self.change_points {
            if tau <= prev || tau > self.rounds {
                return Err(Error::InvalidChangePoints(format!(
                    "need 1 < tau_1 < ... < tau_S <= T = {}, got {:?}",
                    self.rounds, self.change_points
                )));
            }
            prev = tau;
        }
        Ok(())
    }
}

pub struct PiecewiseEnv {
    spec: SyntheticEnvSpec,
    /// `thetas[s][u]`
    thetas: Vec<Vec<Vec<f64>>>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    t: usize,
    current: Option<Current>,
}

struct Current {
    means: Vec<f64>,
    rewards: Vec<f64>,
}

pub fn gen_piecewise(spec: SyntheticEnvSpec) -> Result<PiecewiseEnv> {
    PiecewiseEnv::new(spec)
}

impl PiecewiseEnv {
    pub fn new(spec: SyntheticEnvSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let pieces = spec.change_points.len() + 1;
        let thetas = (0..pieces)
            .map(|_| (0..spec.n_users).map(|_| unit_vector(spec.dim, &mut rng)).collect())
            .collect();
        let noise = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(Self {
            spec,
            thetas,
            rng,
            noise,
            t: 0,
            current: None,
        })
    }

    pub fn spec(&self) -> &SyntheticEnvSpec {
        &self.spec
    }

    /// Piece index of round `t`.
    pub fn piece(&self, t: usize) -> usize {
        self.spec.change_points.iter().filter(|&&tau| tau <= t).count()
    }

    /// Expected reward `g_{u,t}(arm)`.
    pub fn true_mean(&self, user: UserId, t: usize, arm: &[f64]) -> f64 {
        let theta = &self.thetas[self.piece(t)][user as usize];
        self.spec.family.eval(arm, theta)
    }
}

impl Environment for PiecewiseEnv {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn next_round(&mut self) -> Option<Round> {
        if self.t >= self.spec.rounds {
            return None;
        }
        self.t += 1;
        let user = self.rng.random_range(0..self.spec.n_users) as UserId;
        let arms: Vec<Vec<f64>> = (0..self.spec.arms)
            .map(|_| unit_vector(self.spec.dim, &mut self.rng))
            .collect();
        let means: Vec<f64> = arms.iter().map(|a| self.true_mean(user, self.t, a)).collect();
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
        self.current = Some(Current { means, rewards });
        Some(Round { t: self.t, user, arms })
    }

    fn play(&mut self, arm: usize) -> Result<Outcome> {
        let cur = self.current.as_ref().ok_or(Error::Empty("no active round"))?;
        if arm >= cur.means.len() {
            return Err(Error::InvalidParameter(format!("arm {arm} out of range")));
        }
        let best = argmax(&cur.means);
        Ok(Outcome {
            reward: cur.rewards[arm],
            regret: cur.means[best] - cur.means[arm],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticEnvSpec {
        SyntheticEnvSpec {
            rounds: 300,
            change_points: vec![100, 200],
            ..Default::default()
        }
    }

    #[test]
    fn change_point_validation() {
        let bad = [vec![1], vec![50, 50], vec![200, 100], vec![301]];
        for cps in bad {
            let s = SyntheticEnvSpec { change_points: cps, ..spec() };
            assert!(matches!(gen_piecewise(s), Err(Error::InvalidChangePoints(_))));
        }
        assert!(gen_piecewise(SyntheticEnvSpec { arms: 1, ..spec() }).is_err());
    }

    #[test]
    fn stationary_without_change_points() {
        let env = gen_piecewise(SyntheticEnvSpec { change_points: vec![], ..spec() }).unwrap();
        let arm = vec![0.5; 8];
        let g1 = env.true_mean(3, 1, &arm);
        for t in [2, 150, 300] {
            assert_eq!(env.true_mean(3, t, &arm), g1);
        }
    }

    #[test]
    fn pieces_change_at_change_points() {
        let env = gen_piecewise(spec()).unwrap();
        assert_eq!(env.piece(99), 0);
        assert_eq!(env.piece(100), 1);
        assert_eq!(env.piece(300), 2);
        let arm = vec![0.3; 8];
        assert_eq!(env.true_mean(0, 10, &arm), env.true_mean(0, 99, &arm));
        assert_ne!(env.true_mean(0, 99, &arm), env.true_mean(0, 100, &arm));
    }

    #[test]
    fn noiseless_reward_is_the_mean() {
        let mut env = gen_piecewise(SyntheticEnvSpec { noise_sigma: 0.0, ..spec() }).unwrap();
        while let Some(r) = env.next_round() {
            let out = env.play(2).unwrap();
            assert_eq!(out.reward, env.true_mean(r.user, r.t, &r.arms[2]));
            assert!((0.0..=1.0).contains(&out.regret));
        }
    }

    #[test]
    fn cosine_family_range_and_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = unit_vector(8, &mut rng);
        let vals: Vec<f64> = (0..1000)
            .map(|_| RewardFamily::Cosine.eval(&unit_vector(8, &mut rng), &theta))
            .collect();
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        let (lo, hi) = vals
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi - lo > 0.3);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = gen_piecewise(spec()).unwrap();
        let mut b = gen_piecewise(spec()).unwrap();
        for _ in 0..300 {
            let (ra, rb) = (a.next_round().unwrap(), b.next_round().unwrap());
            assert_eq!(ra, rb);
            assert_eq!(a.play(0).unwrap(), b.play(0).unwrap());
        }
        assert!(a.next_round().is_none());
    }
}
