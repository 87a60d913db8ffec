//! Cartesian sweeps over the reinitialization and detector settings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sere_core::drift::PhaConfig;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::write_csv;
use crate::run::{mean_sd, run_seed, PreparedEnv};

/// Candidate values per setting; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridRanges {
    pub rho_min: Vec<f64>,
    pub rho_max: Vec<f64>,
    pub offset: Vec<f64>,
    pub threshold: Vec<f64>,
    pub scale: Vec<f64>,
    pub decay: Vec<f64>,
    pub maturity: Vec<u64>,
    pub beta_user: Vec<f64>,
}

impl GridRanges {
    /// The tuning ranges used for the detector and rate bounds.
    pub fn standard() -> Self {
        Self {
            rho_min: vec![0.005, 0.01, 0.02],
            rho_max: vec![0.05, 0.1, 0.2],
            offset: vec![0.05, 0.1, 0.2],
            threshold: vec![0.3, 0.5, 0.7],
            scale: vec![0.005, 0.01, 0.02],
            ..Default::default()
        }
    }

    /// Checks every value against its tuning range.
    pub fn validate(&self) -> Result<()> {
        let within = |name: &str, vals: &[f64], lo: f64, hi: f64| {
            match vals.iter().find(|v| !(lo..=hi).contains(*v)) {
                Some(v) => Err(HarnessError::Config(format!("{name} = {v} outside [{lo}, {hi}]"))),
                None => Ok(()),
            }
        };
        within("rho_min", &self.rho_min, 0.005, 0.02)?;
        within("rho_max", &self.rho_max, 0.05, 0.2)?;
        within("offset", &self.offset, 0.05, 0.2)?;
        within("threshold", &self.threshold, 0.3, 0.7)?;
        within("scale", &self.scale, 0.005, 0.02)?;
        within("decay", &self.decay, 0.0, 1.0)?;
        within("beta_user", &self.beta_user, 0.0, f64::INFINITY)?;
        Ok(())
    }

    /// Every combination applied to `base`.
    pub fn expand(&self, base: &ExperimentConfig) -> Vec<GridPoint> {
        fn axis<T: Copy>(vals: &[T], default: T) -> Vec<T> {
            if vals.is_empty() {
                vec![default]
            } else {
                vals.to_vec()
            }
        }
        let p = &base.policy;
        let mut out = Vec::new();
        for &rho_min in &axis(&self.rho_min, p.pha.rho_min) {
            for &rho_max in &axis(&self.rho_max, p.pha.rho_max) {
                for &offset in &axis(&self.offset, p.pha.offset) {
                    for &threshold in &axis(&self.threshold, p.pha.threshold) {
                        for &scale in &axis(&self.scale, p.pha.scale) {
                            for &decay in &axis(&self.decay, p.sere.decay) {
                                for &maturity in &axis(&self.maturity, p.sere.maturity) {
                                    for &beta_user in &axis(&self.beta_user, p.beta_user) {
                                        out.push(GridPoint {
                                            rho_min,
                                            rho_max,
                                            offset,
                                            threshold,
                                            scale,
                                            decay,
                                            maturity,
                                            beta_user,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rho_min: f64,
    pub rho_max: f64,
    pub offset: f64,
    pub threshold: f64,
    pub scale: f64,
    pub decay: f64,
    pub maturity: u64,
    pub beta_user: f64,
}

impl GridPoint {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        let p = &mut cfg.policy;
        p.pha.rho_min = self.rho_min;
        p.pha.rho_max = self.rho_max;
        p.pha.offset = self.offset;
        p.pha.threshold = self.threshold;
        p.pha.scale = self.scale;
        p.sere.decay = self.decay;
        p.sere.maturity = self.maturity;
        p.beta_user = self.beta_user;
        cfg
    }

    /// `alpha * lambda <= rho_max - rho_min`.
    pub fn feasible(&self) -> bool {
        PhaConfig {
            rho_min: self.rho_min,
            rho_max: self.rho_max,
            threshold: self.threshold,
            scale: self.scale,
            ..Default::default()
        }
        .rate_bound_holds()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(flatten)]
    pub point: GridPoint,
    pub mean_average_regret: f64,
    pub sd_average_regret: f64,
    pub mean_cumulative_regret: f64,
}

/// Flat CSV form of [`GridRow`]; the csv writer cannot serialize flattened structs.
#[derive(Serialize)]
struct GridCsvRow {
    rho_min: f64,
    rho_max: f64,
    offset: f64,
    threshold: f64,
    scale: f64,
    decay: f64,
    maturity: u64,
    beta_user: f64,
    mean_average_regret: f64,
    sd_average_regret: f64,
    mean_cumulative_regret: f64,
}

impl From<&GridRow> for GridCsvRow {
    fn from(r: &GridRow) -> Self {
        let p = r.point;
        Self {
            rho_min: p.rho_min,
            rho_max: p.rho_max,
            offset: p.offset,
            threshold: p.threshold,
            scale: p.scale,
            decay: p.decay,
            maturity: p.maturity,
            beta_user: p.beta_user,
            mean_average_regret: r.mean_average_regret,
            sd_average_regret: r.sd_average_regret,
            mean_cumulative_regret: r.mean_cumulative_regret,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: ExperimentConfig,
    pub best_row: GridRow,
    pub table: Vec<GridRow>,
    pub skipped: Vec<GridPoint>,
}

impl GridResult {
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let rows: Vec<GridCsvRow> = self.table.iter().map(GridCsvRow::from).collect();
        write_csv(&dir.join("grid.csv"), "grid", &rows)?;
        write_csv(&dir.join("grid_skipped.csv"), "grid_skipped", &self.skipped)?;
        std::fs::write(dir.join("best.toml"), toml::to_string(&self.best).map_err(|e| HarnessError::Config(e.to_string()))?)?;
        Ok(())
    }
}

/// Runs every feasible point over the base seeds and keeps the lowest mean average regret.
///
/// Points violating the rate bound are skipped and reported; ties keep the earlier point.
pub fn grid_search(base: &ExperimentConfig, ranges: &GridRanges) -> Result<GridResult> {
    ranges.validate()?;
    base.validate()?;
    let (feasible, skipped): (Vec<GridPoint>, Vec<GridPoint>) =
        ranges.expand(base).into_iter().partition(GridPoint::feasible);
    if feasible.is_empty() {
        return Err(HarnessError::Config(format!(
            "no feasible grid point ({} skipped)",
            skipped.len()
        )));
    }
    let prepared = PreparedEnv::prepare(base)?;
    let table: Vec<GridRow> = feasible
        .par_iter()
        .map(|point| {
            let cfg = point.apply(base);
            cfg.validate()?;
            let mut avg = Vec::with_capacity(cfg.seeds.len());
            let mut cum = Vec::with_capacity(cfg.seeds.len());
            for &seed in &cfg.seeds {
                let log = run_seed(&cfg, &prepared, seed)?;
                avg.push(log.average_regret());
                cum.push(log.cumulative_regret());
            }
            let (mean_average_regret, sd_average_regret) = mean_sd(&avg);
            Ok(GridRow {
                point: *point,
                mean_average_regret,
                sd_average_regret,
                mean_cumulative_regret: mean_sd(&cum).0,
            })
        })
        .collect::<Result<_>>()?;
    let best_row = table
        .iter()
        .fold(None::<&GridRow>, |best, row| match best {
            Some(b) if b.mean_average_regret <= row.mean_average_regret => Some(b),
            _ => Some(row),
        })
        .expect("feasible set is non-empty")
        .clone();
    Ok(GridResult {
        best: best_row.point.apply(base),
        best_row,
        table,
        skipped,
    })
}

/// Regret for each decay value at the base maturity, then each maturity at the base decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub parameter: String,
    pub value: f64,
    pub mean_average_regret: f64,
    pub mean_cumulative_regret: f64,
}

pub fn sensitivity_sweep(base: &ExperimentConfig, decays: &[f64], maturities: &[u64]) -> Result<Vec<SensitivityRow>> {
    let mut rows = Vec::new();
    let decay_grid = GridRanges {
        decay: decays.to_vec(),
        ..Default::default()
    };
    for row in grid_search(base, &decay_grid)?.table {
        rows.push(SensitivityRow {
            parameter: "decay".into(),
            value: row.point.decay,
            mean_average_regret: row.mean_average_regret,
            mean_cumulative_regret: row.mean_cumulative_regret,
        });
    }
    let maturity_grid = GridRanges {
        maturity: maturities.to_vec(),
        ..Default::default()
    };
    for row in grid_search(base, &maturity_grid)?.table {
        rows.push(SensitivityRow {
            parameter: "maturity".into(),
            value: row.point.maturity as f64,
            mean_average_regret: row.mean_average_regret,
            mean_cumulative_regret: row.mean_cumulative_regret,
        });
    }
    Ok(rows)
}

/// Value with the lowest regret for `parameter`, lowest value on ties.
pub fn best_of(rows: &[SensitivityRow], parameter: &str) -> Option<f64> {
    rows.iter()
        .filter(|r| r.parameter == parameter)
        .fold(None::<&SensitivityRow>, |best, r| match best {
            Some(b) if b.mean_average_regret <= r.mean_average_regret => Some(b),
            _ => Some(r),
        })
        .map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_combination_is_flagged() {
        let p = GridPoint {
            rho_min: 0.01,
            rho_max: 0.02,
            offset: 0.1,
            threshold: 0.7,
            scale: 0.02,
            decay: 0.9,
            maturity: 100,
            beta_user: 0.1,
        };
        // 0.02 * 0.7 = 0.014 > 0.01
        assert!(!p.feasible());
        assert!(GridPoint { scale: 0.01, ..p }.feasible());
    }

    #[test]
    fn ranges_outside_bounds_rejected() {
        let r = GridRanges { rho_max: vec![0.3], ..Default::default() };
        assert!(r.validate().is_err());
        assert!(GridRanges::standard().validate().is_ok());
    }

    #[test]
    fn expand_counts_the_product() {
        let base = ExperimentConfig::default();
        assert_eq!(GridRanges::default().expand(&base).len(), 1);
        assert_eq!(GridRanges::standard().expand(&base).len(), 243);
    }
}
