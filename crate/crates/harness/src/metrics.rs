//! Per-round metric logs, run summaries and their CSV/JSON form.
//!
//! Every CSV starts with a `# <schema> v<version>` comment line. The round,
//! reset and delta files depend only on the configuration and seed; wall-clock
//! measurements live in the separate timing file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use sere_core::clustering::UserId;
use sere_core::policy::RoundRecord;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub t: usize,
    pub user: UserId,
    pub arm: usize,
    pub predicted: f64,
    pub reward: f64,
    pub regret: f64,
    pub cumulative_regret: f64,
    pub rho: f64,
    pub drift: bool,
    pub resets: usize,
    pub clusters: usize,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetRow {
    pub t: usize,
    pub user: UserId,
    pub layer: usize,
    pub unit: usize,
    pub utility: f64,
}

/// Output-layer movement of one user's network since the previous checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSample {
    pub t: usize,
    pub user: UserId,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub t: usize,
    pub sere_ms: f64,
    pub round_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub seed: u64,
    pub rounds: Vec<RoundRow>,
    pub resets: Vec<ResetRow>,
    pub deltas: Vec<DeltaSample>,
    pub timing: Vec<TimingRow>,
}

impl MetricsLog {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    pub fn push(&mut self, rec: &RoundRecord) {
        let cumulative_regret = self.cumulative_regret() + rec.regret;
        self.rounds.push(RoundRow {
            t: rec.t,
            user: rec.user,
            arm: rec.arm,
            predicted: rec.predicted,
            reward: rec.reward,
            regret: rec.regret,
            cumulative_regret,
            rho: rec.rho,
            drift: rec.drift,
            resets: rec.resets.len(),
            clusters: rec.clusters,
            cluster_size: rec.cluster_size,
        });
        self.resets.extend(rec.resets.iter().map(|e| ResetRow {
            t: rec.t,
            user: rec.user,
            layer: e.layer,
            unit: e.unit,
            utility: e.utility,
        }));
        self.timing.push(TimingRow {
            t: rec.t,
            sere_ms: rec.sere_seconds * 1e3,
            round_ms: rec.round_seconds * 1e3,
        });
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cumulative_regret)
    }

    pub fn average_regret(&self) -> f64 {
        if self.rounds.is_empty() {
            0.0
        } else {
            self.cumulative_regret() / self.rounds.len() as f64
        }
    }

    /// Rounds in which at least one unit was replaced, ascending.
    pub fn reset_rounds(&self) -> Vec<usize> {
        self.rounds.iter().filter(|r| r.resets > 0).map(|r| r.t).collect()
    }

    /// Regret summed over the first and second half of the horizon.
    pub fn half_regrets(&self) -> (f64, f64) {
        let mid = self.rounds.len() / 2;
        let first = self.rounds[..mid].iter().map(|r| r.regret).sum();
        let second = self.rounds[mid..].iter().map(|r| r.regret).sum();
        (first, second)
    }

    pub fn summary(&self) -> RunSummary {
        let n = self.timing.len().max(1) as f64;
        let sere_ms = self.timing.iter().map(|r| r.sere_ms).sum::<f64>() / n;
        let round_ms = self.timing.iter().map(|r| r.round_ms).sum::<f64>() / n;
        let (first_half_regret, second_half_regret) = self.half_regrets();
        RunSummary {
            seed: self.seed,
            rounds: self.rounds.len(),
            cumulative_regret: self.cumulative_regret(),
            average_regret: self.average_regret(),
            first_half_regret,
            second_half_regret,
            total_resets: self.resets.len(),
            reinit: compute_reinit_stats(&self.reset_rounds(), self.rounds.len()),
            mean_sere_ms: sere_ms,
            mean_round_ms: round_ms,
            overhead_fraction: if round_ms > 0.0 { sere_ms / round_ms } else { 0.0 },
        }
    }

    /// Writes `rounds.csv`, `resets.csv`, `deltas.csv`, `timing.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("rounds.csv"), "rounds", &self.rounds)?;
        write_csv(&dir.join("resets.csv"), "resets", &self.resets)?;
        write_csv(&dir.join("deltas.csv"), "deltas", &self.deltas)?;
        write_csv(&dir.join("timing.csv"), "timing", &self.timing)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }

    /// The deterministic part of the log (rounds, resets, deltas) as CSV bytes.
    pub fn deterministic_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_records(&mut out, "rounds", &self.rounds)?;
        write_records(&mut out, "resets", &self.resets)?;
        write_records(&mut out, "deltas", &self.deltas)?;
        Ok(out)
    }
}

fn write_records<W: Write, T: Serialize>(mut w: W, schema: &str, rows: &[T]) -> Result<()> {
    writeln!(w, "# {schema} v{SCHEMA_VERSION}")?;
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), schema, rows)
}

/// How often and how regularly units were replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinitStats {
    pub rounds: usize,
    pub rounds_with_reset: usize,
    pub fraction: f64,
    /// Gaps between consecutive reset rounds; absent with fewer than two.
    pub interval_min: Option<usize>,
    pub interval_mean: Option<f64>,
    pub interval_max: Option<usize>,
}

/// Statistics of the ascending, distinct rounds in which a reset happened.
pub fn compute_reinit_stats(reset_rounds: &[usize], total_rounds: usize) -> ReinitStats {
    let gaps: Vec<usize> = reset_rounds.windows(2).map(|w| w[1] - w[0]).collect();
    ReinitStats {
        rounds: total_rounds,
        rounds_with_reset: reset_rounds.len(),
        fraction: if total_rounds == 0 {
            0.0
        } else {
            reset_rounds.len() as f64 / total_rounds as f64
        },
        interval_min: gaps.iter().copied().min(),
        interval_mean: (!gaps.is_empty()).then(|| gaps.iter().sum::<usize>() as f64 / gaps.len() as f64),
        interval_max: gaps.iter().copied().max(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds: usize,
    pub cumulative_regret: f64,
    pub average_regret: f64,
    pub first_half_regret: f64,
    pub second_half_regret: f64,
    pub total_resets: usize,
    pub reinit: ReinitStats,
    pub mean_sere_ms: f64,
    pub mean_round_ms: f64,
    pub overhead_fraction: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reinit_stats_hand_count() {
        let s = compute_reinit_stats(&[10, 20, 30], 100);
        assert_eq!(s.fraction, 0.03);
        assert_eq!((s.interval_min, s.interval_max), (Some(10), Some(10)));
        assert_eq!(s.interval_mean, Some(10.0));
    }

    #[test]
    fn reinit_stats_edges() {
        let none = compute_reinit_stats(&[], 50);
        assert_eq!(none.fraction, 0.0);
        assert_eq!(none.interval_mean, None);
        let every: Vec<usize> = (1..=50).collect();
        let all = compute_reinit_stats(&every, 50);
        assert_eq!(all.fraction, 1.0);
        assert_eq!((all.interval_min, all.interval_max), (Some(1), Some(1)));
    }

    #[test]
    fn csv_has_versioned_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, "timing", &[TimingRow { t: 1, sere_ms: 0.5, round_ms: 2.0 }]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("# timing v1\nt,sere_ms,round_ms\n1,0.5,2.0\n"));
    }
}
