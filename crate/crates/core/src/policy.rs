//! Clustered neural UCB policy with optional selective reinitialization.
//!
//! Each round runs in a fixed order:
//!
//! 1. cluster the active users and build the target user's cluster learner;
//! 2. score every arm with the user prediction plus user and cluster
//!    confidence widths over last-hidden features;
//! 3. play the highest-scoring arm and observe its reward;
//! 4. take one SGD step on the user network and rank-one update the user
//!    and cluster design matrices with the played arm's user features;
//! 5. feed `|r - r_hat|` (prediction taken before the SGD step) to the drift
//!    detector and derive the replacement rate;
//! 6. run the reinitialization step on the user network.
//!
//! Cluster learners are rebuilt every round from their members (the mean of
//! the member networks and the summed member Gram matrices), so only user
//! networks carry reinitialization state.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clustering::{club_clusters, mcnb_assignment, ClusterAssignment, UserEmbedding, UserId};
use crate::drift::{PhaConfig, PhaDetector};
use crate::env::{argmax, Environment, Round};
use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;
use crate::mlp::{Network, NetworkShape};
use crate::plasticity::{ResetEvent, SereConfig, UtilityState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringMode {
    /// Connected components over output-layer weights.
    #[default]
    Club,
    /// Per-arm grouping by predicted reward.
    Mcnb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub beta_user: f64,
    pub beta_cluster: f64,
    pub ridge: f64,
    pub clustering: ClusteringMode,
    pub epsilon1: f64,
    pub reward_tolerance: f64,
    pub sere_enabled: bool,
    pub sere: SereConfig,
    pub pha: PhaConfig,
    /// Unsupported: cluster networks are rebuilt every round.
    pub sere_on_clusters: bool,
    pub reinvert_every: u64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            lr: 0.05,
            beta_user: 0.05,
            beta_cluster: 0.05,
            ridge: 1.0,
            clustering: ClusteringMode::Club,
            epsilon1: 0.5,
            reward_tolerance: 1e-2,
            sere_enabled: true,
            sere: SereConfig::default(),
            pha: PhaConfig::default(),
            sere_on_clusters: false,
            reinvert_every: 500,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be non-empty and >= 1, got {:?}", self.hidden));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.beta_user >= 0.0 && self.beta_cluster >= 0.0)
            || !(self.beta_user.is_finite() && self.beta_cluster.is_finite())
        {
            return bad("exploration coefficients must be finite and >= 0".into());
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be > 0, got {}", self.ridge));
        }
        if !(self.epsilon1 > 0.0) {
            return bad(format!("epsilon1 must be > 0, got {}", self.epsilon1));
        }
        if !(self.reward_tolerance >= 0.0) {
            return bad(format!("reward tolerance must be >= 0, got {}", self.reward_tolerance));
        }
        if self.sere_on_clusters {
            return bad("sere_on_clusters is not supported: cluster networks are derived each round".into());
        }
        self.sere.validate()?;
        self.pha.validate()
    }
}

fn mix_seed(seed: u64, user: UserId, stream: u64) -> u64 {
    // splitmix64 finalizer over (seed, user, stream)
    let mut z = seed
        .wrapping_add((user as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct UserLearner {
    pub user: UserId,
    pub net: Network,
    pub sere: UtilityState,
    pub design: DesignMatrix,
    pub plays: u64,
}

impl UserLearner {
    pub fn new(user: UserId, shape: &NetworkShape, config: &PolicyConfig) -> Result<Self> {
        Ok(Self {
            user,
            net: Network::kaiming(shape.clone(), mix_seed(config.seed, user, 0)),
            sere: UtilityState::new(shape, config.sere, mix_seed(config.seed, user, 1))?,
            design: DesignMatrix::new(shape.last_hidden_width(), config.ridge, config.reinvert_every)?,
            plays: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClusterLearner {
    pub members: Vec<UserId>,
    pub net: Network,
    pub design: DesignMatrix,
}

impl ClusterLearner {
    /// Mean member network and `ridge * I + sum of member Gram matrices`.
    pub fn from_members(members: &[&UserLearner], ridge: f64, reinvert_every: u64) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("cluster members"))?;
        let net = Network::mean_of(members.iter().map(|m| &m.net))?;
        let n = first.design.dim();
        let mut gram = DMatrix::zeros(n, n);
        for m in members {
            gram += m.design.gram();
        }
        Ok(Self {
            members: members.iter().map(|m| m.user).collect(),
            net,
            design: DesignMatrix::from_gram(ridge, &gram, reinvert_every)?,
        })
    }
}

/// Score of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmScore {
    /// User-network prediction clamped to `[0, 1]`.
    pub predicted: f64,
    pub confidence: f64,
    pub ucb: f64,
    /// Last-hidden user features of the arm.
    pub features: Vec<f64>,
}

/// Scores `arms` with `r_hat + beta_u ||phi_u||_{A_u^-1} + beta_c ||phi_c||_{A_c^-1}`.
pub fn ucb_scores(
    user: &UserLearner,
    cluster: &ClusterLearner,
    arms: &[Vec<f64>],
    beta_user: f64,
    beta_cluster: f64,
) -> Result<Vec<ArmScore>> {
    arms.iter()
        .map(|a| {
            let trace = user.net.forward(a)?;
            let phi_c = cluster.net.last_hidden_features(a)?;
            let predicted = trace.prediction.clamp(0.0, 1.0);
            let features = trace.activations.last().cloned().unwrap_or_default();
            let confidence = beta_user * user.design.width(&features)? + beta_cluster * cluster.design.width(&phi_c)?;
            let ucb = predicted + confidence;
            if !ucb.is_finite() || trace.prediction.is_nan() {
                return Err(Error::NonFinite("arm score"));
            }
            Ok(ArmScore {
                predicted,
                confidence,
                ucb,
                features,
            })
        })
        .collect()
}

/// Index of the largest score; ties go to the lowest index, an empty slice gives 0.
pub fn select_arm(scores: &[f64]) -> usize {
    argmax(scores)
}

/// Everything observed and done in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub user: UserId,
    pub arm: usize,
    pub predicted: f64,
    pub reward: f64,
    pub regret: f64,
    /// Replacement rate applied this round; 0 when reinitialization is off.
    pub rho: f64,
    pub drift: bool,
    pub deviation: f64,
    pub resets: Vec<ResetEvent>,
    /// Number of clusters the target user's partition splits into (played arm's in per-arm mode).
    pub clusters: usize,
    pub cluster_size: usize,
    pub sere_seconds: f64,
    pub round_seconds: f64,
}

pub struct Policy {
    config: PolicyConfig,
    shape: NetworkShape,
    users: BTreeMap<UserId, UserLearner>,
    detector: PhaDetector,
}

impl Policy {
    pub fn new(config: PolicyConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let shape = NetworkShape::with_hidden(input_dim, &config.hidden)?;
        let detector = PhaDetector::new(config.pha)?;
        Ok(Self {
            config,
            shape,
            users: BTreeMap::new(),
            detector,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn detector(&self) -> &PhaDetector {
        &self.detector
    }

    pub fn users(&self) -> impl Iterator<Item = &UserLearner> {
        self.users.values()
    }

    pub fn user(&self, id: UserId) -> Option<&UserLearner> {
        self.users.get(&id)
    }

    fn cluster(&self, arms: &[Vec<f64>]) -> Result<ClusterAssignment> {
        match self.config.clustering {
            ClusteringMode::Club => {
                let embeddings: Vec<UserEmbedding> = self
                    .users
                    .values()
                    .map(|l| UserEmbedding::new(l.user, l.net.output_layer().weights().to_vec()))
                    .collect();
                club_clusters(&embeddings, self.config.epsilon1)
            }
            ClusteringMode::Mcnb => {
                let mut per_arm = vec![Vec::with_capacity(self.users.len()); arms.len()];
                for l in self.users.values() {
                    for (i, a) in arms.iter().enumerate() {
                        per_arm[i].push((l.user, l.net.predict(a)?));
                    }
                }
                mcnb_assignment(&per_arm, self.config.reward_tolerance)
            }
        }
    }

    /// Plays one round against `env`; `None` once the environment is exhausted.
    pub fn play_round<E: Environment + ?Sized>(&mut self, env: &mut E) -> Result<Option<RoundRecord>> {
        let Some(round) = env.next_round() else {
            return Ok(None);
        };
        let start = Instant::now();
        let Round { t, user, arms } = round;
        if arms.is_empty() {
            return Err(Error::Empty("arm set"));
        }
        if !self.users.contains_key(&user) {
            let learner = UserLearner::new(user, &self.shape, &self.config)?;
            self.users.insert(user, learner);
        }

        let assignment = self.cluster(&arms)?;
        let target = &self.users[&user];
        let mut learners: HashMap<Vec<UserId>, ClusterLearner> = HashMap::new();
        let mut arm_cluster: Vec<Vec<UserId>> = Vec::with_capacity(arms.len());
        for i in 0..arms.len() {
            let members = assignment
                .for_arm(i)
                .group_of(user)
                .ok_or(Error::Empty("target user's cluster"))?
                .to_vec();
            if !learners.contains_key(&members) {
                let refs: Vec<&UserLearner> = members.iter().map(|u| &self.users[u]).collect();
                let learner = ClusterLearner::from_members(&refs, self.config.ridge, self.config.reinvert_every)?;
                learners.insert(members.clone(), learner);
            }
            arm_cluster.push(members);
        }

        let mut scores = Vec::with_capacity(arms.len());
        for (i, a) in arms.iter().enumerate() {
            let cluster = &learners[&arm_cluster[i]];
            let s = ucb_scores(
                target,
                cluster,
                std::slice::from_ref(a),
                self.config.beta_user,
                self.config.beta_cluster,
            )?;
            scores.extend(s);
        }
        let ucb: Vec<f64> = scores.iter().map(|s| s.ucb).collect();
        let arm = select_arm(&ucb);
        let outcome = env.play(arm)?;
        let played = &scores[arm];

        let learner = self.users.get_mut(&user).expect("learner inserted above");
        learner.plays += 1;
        let trace = learner.net.train_step(&arms[arm], outcome.reward, self.config.lr)?;
        learner.design.rank_one_update(&played.features)?;
        if let Some(cluster) = learners.get_mut(&arm_cluster[arm]) {
            cluster.design.rank_one_update(&played.features)?;
        }

        self.detector.observe((outcome.reward - played.predicted).abs())?;
        let decision = self.detector.current_rho();
        let rho = if self.config.sere_enabled { decision.rho } else { 0.0 };

        let mut resets = Vec::new();
        let mut sere_seconds = 0.0;
        if self.config.sere_enabled {
            let s = Instant::now();
            resets = learner.sere.step(&mut learner.net, &trace, rho)?;
            sere_seconds = s.elapsed().as_secs_f64();
        }

        let partition = assignment.for_arm(arm);
        Ok(Some(RoundRecord {
            t,
            user,
            arm,
            predicted: played.predicted,
            reward: outcome.reward,
            regret: outcome.regret,
            rho,
            drift: decision.drift,
            deviation: decision.deviation,
            resets,
            clusters: partition.len(),
            cluster_size: arm_cluster[arm].len(),
            sere_seconds,
            round_seconds: start.elapsed().as_secs_f64(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Outcome;

    struct TwoArm {
        t: usize,
        rounds: usize,
    }

    impl Environment for TwoArm {
        fn dim(&self) -> usize {
            2
        }

        fn next_round(&mut self) -> Option<Round> {
            (self.t < self.rounds).then(|| {
                self.t += 1;
                Round {
                    t: self.t,
                    user: 0,
                    arms: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                }
            })
        }

        fn play(&mut self, arm: usize) -> Result<Outcome> {
            let reward = if arm == 0 { 1.0 } else { 0.0 };
            Ok(Outcome { reward, regret: 1.0 - reward })
        }
    }

    fn greedy() -> PolicyConfig {
        PolicyConfig {
            beta_user: 0.0,
            beta_cluster: 0.0,
            sere_enabled: false,
            lr: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn selection_breaks_ties_low() {
        assert_eq!(select_arm(&[0.2, 0.9, 0.9]), 1);
        assert_eq!(select_arm(&[0.4]), 0);
    }

    #[test]
    fn zero_exploration_scores_are_predictions() {
        let cfg = greedy();
        let shape = NetworkShape::with_hidden(3, &cfg.hidden).unwrap();
        let user = UserLearner::new(0, &shape, &cfg).unwrap();
        let cluster = ClusterLearner::from_members(&[&user], 1.0, 500).unwrap();
        let arms = vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.4, 0.9]];
        for (s, a) in ucb_scores(&user, &cluster, &arms, 0.0, 0.0).unwrap().iter().zip(&arms) {
            assert_eq!(s.ucb, user.net.predict(a).unwrap().clamp(0.0, 1.0));
        }
    }

    #[test]
    fn greedy_fixture_learns_the_rewarding_arm() {
        let mut policy = Policy::new(greedy(), 2).unwrap();
        let mut env = TwoArm { t: 0, rounds: 400 };
        let mut late = 0;
        while let Some(r) = policy.play_round(&mut env).unwrap() {
            if r.t > 300 && r.arm == 0 {
                late += 1;
            }
        }
        assert_eq!(late, 100);
        assert_eq!(policy.user(0).unwrap().plays, 400);
    }

    #[test]
    fn cluster_matrix_sums_member_grams() {
        let cfg = PolicyConfig::default();
        let shape = NetworkShape::with_hidden(2, &[3]).unwrap();
        let mut a = UserLearner::new(0, &shape, &cfg).unwrap();
        let mut b = UserLearner::new(1, &shape, &cfg).unwrap();
        a.design.rank_one_update(&[1.0, 0.0, 0.0]).unwrap();
        b.design.rank_one_update(&[0.0, 2.0, 0.0]).unwrap();
        let c = ClusterLearner::from_members(&[&a, &b], 1.0, 500).unwrap();
        let m = c.design.matrix();
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(1, 1)], 5.0);
        assert_eq!(m[(2, 2)], 1.0);
        assert_eq!(c.members, vec![0, 1]);
    }

    #[test]
    fn config_rejects_cluster_reinit_and_bad_values() {
        assert!(PolicyConfig { sere_on_clusters: true, ..Default::default() }.validate().is_err());
        assert!(PolicyConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(PolicyConfig { ridge: -1.0, ..Default::default() }.validate().is_err());
        assert!(PolicyConfig { hidden: vec![], ..Default::default() }.validate().is_err());
        let mut bad_rate = PolicyConfig::default();
        bad_rate.pha.scale = 0.5;
        assert!(bad_rate.validate().is_err());
    }

    #[test]
    fn user_seeds_differ() {
        let cfg = PolicyConfig::default();
        let shape = NetworkShape::with_hidden(2, &[4]).unwrap();
        let a = UserLearner::new(0, &shape, &cfg).unwrap();
        let b = UserLearner::new(1, &shape, &cfg).unwrap();
        assert_ne!(a.net, b.net);
    }
}
