//! Page-Hinkley test over absolute prediction errors, driving the replacement rate.
//!
//! The statistic accumulates `|r - r_hat| - delta` and tracks its running
//! minimum. When the rise above the minimum exceeds the threshold a drift is
//! declared and the rate jumps to `rho_max`; otherwise the rate grows
//! linearly from `rho_min` with the rise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaConfig {
    /// Offset `delta` subtracted from every error.
    pub offset: f64,
    /// Detection threshold `lambda` on `pha - pha_min`.
    pub threshold: f64,
    /// Slope `alpha` of the stable-branch rate.
    pub scale: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Reset the statistic and its minimum to zero after a detection.
    pub rearm: bool,
}

impl Default for PhaConfig {
    fn default() -> Self {
        Self {
            offset: 0.1,
            threshold: 0.5,
            scale: 0.01,
            rho_min: 0.01,
            rho_max: 0.1,
            rearm: true,
        }
    }
}

impl PhaConfig {
    /// Checks positivity, ordering of the rate bounds and `alpha * lambda <= rho_max - rho_min`.
    ///
    /// `rho_min = rho_max = 0` with `alpha = 0` is accepted; it switches
    /// reinitialization off while keeping the detector running.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return bad(format!("offset must be > 0, got {}", self.offset));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad(format!("threshold must be > 0, got {}", self.threshold));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be >= 0, got {}", self.scale));
        }
        if !(0.0 <= self.rho_min && self.rho_min <= self.rho_max && self.rho_max < 1.0) {
            return bad(format!(
                "need 0 <= rho_min <= rho_max < 1, got [{}, {}]",
                self.rho_min, self.rho_max
            ));
        }
        if !self.rate_bound_holds() {
            return bad(format!(
                "alpha * lambda = {} exceeds rho_max - rho_min = {}",
                self.scale * self.threshold,
                self.rho_max - self.rho_min
            ));
        }
        Ok(())
    }

    /// `alpha * lambda <= rho_max - rho_min`, with a rounding allowance.
    pub fn rate_bound_holds(&self) -> bool {
        self.scale * self.threshold <= self.rho_max - self.rho_min + 1e-12
    }
}

/// Result of one rate query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDecision {
    pub rho: f64,
    pub drift: bool,
    /// `pha - pha_min` at the time of the query (before any re-arm).
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaDetector {
    config: PhaConfig,
    pha: f64,
    pha_min: f64,
    detections: u64,
}

impl PhaDetector {
    pub fn new(config: PhaConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            pha: 0.0,
            pha_min: 0.0,
            detections: 0,
        })
    }

    pub fn config(&self) -> &PhaConfig {
        &self.config
    }

    pub fn pha(&self) -> f64 {
        self.pha
    }

    pub fn pha_min(&self) -> f64 {
        self.pha_min
    }

    pub fn deviation(&self) -> f64 {
        self.pha - self.pha_min
    }

    pub fn detections(&self) -> u64 {
        self.detections
    }

    pub fn observe(&mut self, abs_error: f64) -> Result<()> {
        if !(abs_error >= 0.0 && abs_error.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "absolute error must be finite and >= 0, got {abs_error}"
            )));
        }
        self.pha += abs_error - self.config.offset;
        self.pha_min = self.pha_min.min(self.pha);
        Ok(())
    }

    /// Maps the current deviation to a replacement rate, re-arming on detection.
    pub fn current_rho(&mut self) -> RateDecision {
        let cfg = &self.config;
        let deviation = self.pha - self.pha_min;
        if deviation > cfg.threshold {
            self.detections += 1;
            if cfg.rearm {
                self.pha = 0.0;
                self.pha_min = 0.0;
            }
            RateDecision {
                rho: cfg.rho_max,
                drift: true,
                deviation,
            }
        } else {
            let rho = (cfg.rho_min + cfg.scale * deviation).min(cfg.rho_max);
            RateDecision {
                rho,
                drift: false,
                deviation,
            }
        }
    }
}
