use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use sere_core::env::{IngestOptions, PerturbedSpec, RewardFamily, SyntheticEnvSpec};
use sere_core::policy::{ClusteringMode, PolicyConfig};

use crate::error::{HarnessError, Result};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "SERE_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ClubN,
    McnbLite,
}

impl Algorithm {
    pub fn clustering(self) -> ClusteringMode {
        match self {
            Algorithm::ClubN => ClusteringMode::Club,
            Algorithm::McnbLite => ClusteringMode::Mcnb,
        }
    }
}

/// Algorithm plus the reinitialization switch, written `club_n` or `club_n+sere`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgoSpec {
    pub algorithm: Algorithm,
    pub sere: bool,
}

impl FromStr for AlgoSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, sere) = match s.strip_suffix("+sere") {
            Some(base) => (base, true),
            None => (s, false),
        };
        let algorithm = match name {
            "club_n" => Algorithm::ClubN,
            "mcnb_lite" => Algorithm::McnbLite,
            other => return Err(HarnessError::Config(format!("unknown algorithm {other:?}"))),
        };
        Ok(Self { algorithm, sere })
    }
}

impl fmt::Display for AlgoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.algorithm {
            Algorithm::ClubN => "club_n",
            Algorithm::McnbLite => "mcnb_lite",
        };
        write!(f, "{name}{}", if self.sere { "+sere" } else { "" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Piecewise,
    Perturbed,
    Dataset,
}

impl FromStr for EnvKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise" => Ok(EnvKind::Piecewise),
            "perturbed" => Ok(EnvKind::Perturbed),
            "dataset" => Ok(EnvKind::Dataset),
            other => Err(HarnessError::Config(format!("unknown environment {other:?}"))),
        }
    }
}

/// Synthetic base features plus the perturbation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbedConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Per-side feature dimension; arms have twice this many entries.
    pub dim: usize,
    /// Number of user centres; 0 draws every user independently.
    pub user_groups: usize,
    pub group_spread: f64,
    pub period: usize,
    pub sigma: f64,
    pub noise_sigma: f64,
    pub arms: usize,
    pub family: RewardFamily,
}

impl Default for PerturbedConfig {
    fn default() -> Self {
        let spec = PerturbedSpec::default();
        Self {
            n_users: 10,
            n_items: 200,
            dim: 8,
            user_groups: 0,
            group_spread: 0.1,
            period: spec.period,
            sigma: spec.sigma,
            noise_sigma: spec.noise_sigma,
            arms: spec.arms,
            family: spec.family,
        }
    }
}

impl PerturbedConfig {
    pub fn spec(&self, rounds: usize, seed: u64) -> PerturbedSpec {
        PerturbedSpec {
            period: self.period,
            sigma: self.sigma,
            noise_sigma: self.noise_sigma,
            arms: self.arms,
            rounds,
            family: self.family,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Ratings file with a `user,item,rating[,...]` header.
    pub path: PathBuf,
    /// Preprocessed JSON written on first use and read afterwards.
    pub cache: Option<PathBuf>,
    pub ingest: IngestOptions,
    /// Perturb user features every this many rounds; 0 disables it.
    pub perturb_period: usize,
    pub perturb_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/ratings.csv"),
            cache: None,
            ingest: IngestOptions::default(),
            perturb_period: 0,
            perturb_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub sere: bool,
    pub env: EnvKind,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    /// Sampling period of the last-layer delta diagnostic.
    pub delta_every: usize,
    /// Spacing of the cumulative-regret confidence band.
    pub band_every: usize,
    pub out_dir: Option<PathBuf>,
    /// `clustering` and `sere_enabled` are overridden by `algorithm` and `sere`.
    pub policy: PolicyConfig,
    pub piecewise: SyntheticEnvSpec,
    pub perturbed: PerturbedConfig,
    pub dataset: DatasetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::ClubN,
            sere: true,
            env: EnvKind::Perturbed,
            rounds: 10_000,
            seeds: (0..5).collect(),
            delta_every: 25,
            band_every: 100,
            out_dir: None,
            policy: PolicyConfig::default(),
            piecewise: SyntheticEnvSpec::default(),
            perturbed: PerturbedConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Settings selected on the perturbed environment; also shipped as `configs/tuned.toml`.
    ///
    /// One wide hidden layer keeps the reset budget low: at most about
    /// `32 * rho / (1 + rho * m)` units are replaced per step.
    pub fn tuned() -> Self {
        let mut cfg = Self::default();
        let p = &mut cfg.policy;
        p.hidden = vec![32];
        p.lr = 0.5;
        p.sere.decay = 0.95;
        p.sere.maturity = 200;
        p.pha.rho_min = 0.001;
        p.pha.rho_max = 0.05;
        p.pha.scale = 0.005;
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn algo(&self) -> AlgoSpec {
        AlgoSpec {
            algorithm: self.algorithm,
            sere: self.sere,
        }
    }

    pub fn set_algo(&mut self, algo: AlgoSpec) {
        self.algorithm = algo.algorithm;
        self.sere = algo.sere;
    }

    /// Policy settings for one seed.
    pub fn policy_config(&self, seed: u64) -> PolicyConfig {
        PolicyConfig {
            clustering: self.algorithm.clustering(),
            sere_enabled: self.sere,
            seed,
            ..self.policy.clone()
        }
    }

    /// Output directory: the environment override, then the config value.
    pub fn resolved_out_dir(&self) -> Option<PathBuf> {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.out_dir.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.delta_every == 0 || self.band_every == 0 {
            return bad("sampling periods must be >= 1");
        }
        self.policy_config(0)
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match self.env {
            EnvKind::Piecewise => SyntheticEnvSpec {
                rounds: self.rounds,
                ..self.piecewise.clone()
            }
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string())),
            EnvKind::Perturbed => {
                let p = &self.perturbed;
                if p.n_users == 0 || p.dim == 0 || p.period == 0 {
                    return bad("perturbed environment needs users, dim and period >= 1");
                }
                if p.arms < 2 || p.arms > p.n_items {
                    return bad("perturbed environment needs 2 <= arms <= n_items");
                }
                Ok(())
            }
            EnvKind::Dataset => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_spec_roundtrip() {
        for s in ["club_n", "club_n+sere", "mcnb_lite", "mcnb_lite+sere"] {
            assert_eq!(s.parse::<AlgoSpec>().unwrap().to_string(), s);
        }
        assert!("linucb".parse::<AlgoSpec>().is_err());
    }

    #[test]
    fn toml_overrides_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            algorithm = "mcnb_lite"
            rounds = 50
            seeds = [7]
            [policy]
            lr = 0.2
            [policy.sere]
            maturity = 50
            "#,
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::McnbLite);
        assert_eq!(cfg.policy.lr, 0.2);
        assert_eq!(cfg.policy.sere.maturity, 50);
        assert_eq!(cfg.policy_config(7).clustering, ClusteringMode::Mcnb);
        assert_eq!(cfg.policy_config(7).seed, 7);
    }

    #[test]
    fn shipped_tuned_file_matches_tuned() {
        let text = include_str!("../../../configs/tuned.toml");
        assert_eq!(ExperimentConfig::from_toml_str(text).unwrap(), ExperimentConfig::tuned());
    }

    #[test]
    fn rejects_violations_at_load() {
        assert!(ExperimentConfig::from_toml_str("rounds = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("seeds = []").is_err());
        let infeasible = "[policy.pha]\nscale = 0.02\nthreshold = 0.7\nrho_min = 0.01\nrho_max = 0.02\n";
        assert!(ExperimentConfig::from_toml_str(infeasible).is_err());
        assert!(ExperimentConfig::from_toml_str("[policy]\nsere_on_clusters = true").is_err());
    }
}
