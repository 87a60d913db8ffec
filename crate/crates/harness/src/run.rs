use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use sere_core::clustering::UserId;
use sere_core::env::{
    gen_perturbed, gen_piecewise, ingest_ratings, BaseFeatures, DatasetEnv, Environment, RatingsDataset,
    SyntheticEnvSpec,
};
use sere_core::mlp::Network;
use sere_core::policy::Policy;

use crate::config::{EnvKind, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::{write_csv, MetricsLog, RunSummary};

/// Environment inputs shared by every seed of an experiment.
pub enum PreparedEnv {
    Synthetic,
    Dataset(RatingsDataset),
}

impl PreparedEnv {
    /// Loads (or ingests and caches) the ratings dataset when one is needed.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.env != EnvKind::Dataset {
            return Ok(PreparedEnv::Synthetic);
        }
        let d = &cfg.dataset;
        if let Some(cache) = &d.cache {
            if cache.exists() {
                return Ok(PreparedEnv::Dataset(RatingsDataset::load(cache)?));
            }
        }
        let ds = ingest_ratings(&d.path, &d.ingest)?;
        if let Some(cache) = &d.cache {
            ds.save(cache)?;
        }
        Ok(PreparedEnv::Dataset(ds))
    }

    pub fn build(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Environment>> {
        Ok(match (cfg.env, self) {
            (EnvKind::Piecewise, _) => Box::new(gen_piecewise(SyntheticEnvSpec {
                rounds: cfg.rounds,
                seed,
                ..cfg.piecewise.clone()
            })?),
            (EnvKind::Perturbed, _) => {
                let p = &cfg.perturbed;
                let base = if p.user_groups == 0 {
                    BaseFeatures::random(p.n_users, p.n_items, p.dim, seed)
                } else {
                    BaseFeatures::grouped(p.n_users, p.n_items, p.dim, p.user_groups, p.group_spread, seed)
                };
                Box::new(gen_perturbed(base, p.spec(cfg.rounds, seed))?)
            }
            (EnvKind::Dataset, PreparedEnv::Dataset(ds)) => {
                let d = &cfg.dataset;
                let perturb = (d.perturb_period > 0).then_some((d.perturb_period, d.perturb_sigma));
                Box::new(DatasetEnv::new(ds.clone(), cfg.rounds, perturb, seed)?)
            }
            (EnvKind::Dataset, PreparedEnv::Synthetic) => {
                return Err(HarnessError::Config("dataset environment was not prepared".into()))
            }
        })
    }
}

/// Runs one seed for `cfg.rounds` rounds.
pub fn run_seed(cfg: &ExperimentConfig, prepared: &PreparedEnv, seed: u64) -> Result<MetricsLog> {
    let mut env = prepared.build(cfg, seed)?;
    let mut policy = Policy::new(cfg.policy_config(seed), env.dim())?;
    let mut log = MetricsLog::new(seed);
    let mut snapshot: HashMap<UserId, Network> = HashMap::new();
    loop {
        let round = log.rounds.len() + 1;
        let rec = match policy.play_round(env.as_mut()) {
            Ok(Some(rec)) => rec,
            Ok(None) => break,
            Err(source) => return Err(HarnessError::Round { round, source }),
        };
        log.push(&rec);
        if rec.t % cfg.delta_every == 0 {
            let mut users: Vec<_> = policy.users().collect();
            users.sort_by_key(|u| u.user);
            for learner in users {
                if let Some(prev) = snapshot.get(&learner.user) {
                    log.deltas.push(crate::metrics::DeltaSample {
                        t: rec.t,
                        user: learner.user,
                        delta: learner.net.last_layer_delta(prev)?,
                    });
                }
                snapshot.insert(learner.user, learner.net.clone());
            }
        }
    }
    Ok(log)
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub t: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean cumulative regret with a `1.96 sd / sqrt(n)` band every `every` rounds and at the horizon.
pub fn confidence_band(logs: &[MetricsLog], every: usize) -> Vec<BandPoint> {
    let horizon = logs.iter().map(|l| l.rounds.len()).min().unwrap_or(0);
    let mut points: Vec<usize> = (every..=horizon).step_by(every.max(1)).collect();
    if horizon > 0 && points.last() != Some(&horizon) {
        points.push(horizon);
    }
    points
        .into_iter()
        .map(|t| {
            let values: Vec<f64> = logs.iter().map(|l| l.rounds[t - 1].cumulative_regret).collect();
            let (mean, sd) = mean_sd(&values);
            let half = 1.96 * sd / (values.len() as f64).sqrt();
            BandPoint {
                t,
                mean,
                lower: mean - half,
                upper: mean + half,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub mean_average_regret: f64,
    pub sd_average_regret: f64,
    pub mean_cumulative_regret: f64,
    pub runs: Vec<RunSummary>,
}

pub struct ExperimentResult {
    pub logs: Vec<MetricsLog>,
    pub aggregate: Aggregate,
    pub band: Vec<BandPoint>,
}

/// Runs every seed (in parallel) and aggregates; writes outputs when an output directory is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let prepared = PreparedEnv::prepare(cfg)?;
    let logs: Vec<MetricsLog> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &prepared, s))
        .collect::<Result<_>>()?;
    let runs: Vec<RunSummary> = logs.iter().map(MetricsLog::summary).collect();
    let avg: Vec<f64> = runs.iter().map(|r| r.average_regret).collect();
    let cum: Vec<f64> = runs.iter().map(|r| r.cumulative_regret).collect();
    let (mean_average_regret, sd_average_regret) = mean_sd(&avg);
    let aggregate = Aggregate {
        algorithm: cfg.algo().to_string(),
        seeds: cfg.seeds.clone(),
        mean_average_regret,
        sd_average_regret,
        mean_cumulative_regret: mean_sd(&cum).0,
        runs,
    };
    let band = confidence_band(&logs, cfg.band_every);
    let result = ExperimentResult { logs, aggregate, band };
    if let Some(dir) = cfg.resolved_out_dir() {
        write_experiment(&dir, &result)?;
    }
    Ok(result)
}

pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for log in &result.logs {
        log.write(&dir.join(format!("seed_{}", log.seed)))?;
    }
    write_csv(&dir.join("band.csv"), "band", &result.band)?;
    std::fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(&result.aggregate)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(HarnessError::Config("paired test needs two equal samples of size >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_sd(&diffs);
    let n = diffs.len() as f64;
    if sd == 0.0 {
        let p_value = if mean == 0.0 { 1.0 } else { 0.0 };
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(PairedTest { mean_difference: mean, t, p_value });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| HarnessError::Config(e.to_string()))?;
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTest {
        mean_difference: mean,
        t,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_test_against_reference_value() {
        // differences [1, 2, 3, 4]: mean 2.5, sd 1.2910, t = 3.873, df 3, p = 0.03047
        let a = [2.0, 4.0, 6.0, 8.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 3.872983346207417).abs() < 1e-12);
        assert!((r.p_value - 0.030466).abs() < 1e-5, "{}", r.p_value);
        assert!(paired_t_test(&a, &b[..3]).is_err());
        assert_eq!(paired_t_test(&a, &a).unwrap().p_value, 1.0);
    }

    #[test]
    fn band_covers_checkpoints_and_horizon() {
        let mut logs = Vec::new();
        for s in 0..3 {
            let mut log = MetricsLog::new(s);
            for t in 1..=10 {
                log.push(&sere_core::policy::RoundRecord {
                    t,
                    user: 0,
                    arm: 0,
                    predicted: 0.0,
                    reward: 0.0,
                    regret: 0.1 * (s + 1) as f64,
                    rho: 0.0,
                    drift: false,
                    deviation: 0.0,
                    resets: vec![],
                    clusters: 1,
                    cluster_size: 1,
                    sere_seconds: 0.0,
                    round_seconds: 0.0,
                });
            }
            logs.push(log);
        }
        let band = confidence_band(&logs, 4);
        assert_eq!(band.iter().map(|b| b.t).collect::<Vec<_>>(), vec![4, 8, 10]);
        let last = band[2];
        assert!((last.mean - 2.0).abs() < 1e-12);
        assert!((last.upper - last.mean - 1.96 * 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }
}
