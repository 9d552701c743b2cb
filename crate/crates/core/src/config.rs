//! Simulation parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Channel composition used when building statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    /// Distance-dependent Rician factor.
    #[default]
    Rician,
    /// Rician factor forced to infinity: no scattered component.
    PureLos,
    /// Rician factor forced to zero: Rayleigh fading.
    PureNlos,
}

/// How the running LoS mean evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LosMode {
    /// Average over every block seen so far.
    #[default]
    Running,
    /// Stop updating after `B` blocks.
    Frozen,
}

/// Recurrence used by the correlation trackers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// `Q[b] = eta Q[b-1] + (1 - eta) S[b]`.
    #[default]
    Exponential,
    /// Plain arithmetic mean of the samples (ignores the initial value).
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of access points.
    #[serde(rename = "L")]
    pub aps: usize,
    /// Antennas per access point.
    #[serde(rename = "N")]
    pub antennas: usize,
    /// Number of single-antenna users.
    #[serde(rename = "K")]
    pub ues: usize,
    /// Pilot length in samples; equals the coherence block length.
    pub tau_p: usize,
    /// Per-user transmit power in watts.
    #[serde(rename = "p")]
    pub power: f64,
    /// Noise variance in watts.
    pub sigma2: f64,
    /// Forgetting factor of the exponential averages.
    pub eta: f64,
    /// LoS averaging window for [`LosMode::Frozen`].
    #[serde(rename = "B")]
    pub los_blocks: usize,
    /// Side of the square deployment area in meters.
    pub area_m: f64,
    pub seed: u64,
    /// Coherence blocks per network realization, warm-up included.
    pub blocks: usize,
    /// Leading blocks that update trackers but do not count towards the NMSE.
    pub warmup: usize,
    pub los_mode: LosMode,
    pub averaging: Averaging,
    pub fading: Fading,
    /// Scale fusion vectors to unit norm before fusing.
    pub normalize_fusion: bool,
    pub ap_height_m: f64,
    /// Floor applied to horizontal AP-UE distances.
    pub min_distance_m: f64,
    /// Standard deviation of the Gaussian azimuth spread, in degrees.
    pub angular_spread_deg: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            aps: 3,
            antennas: 5,
            ues: 5,
            tau_p: 5,
            power: 0.1,
            sigma2: dbm_to_watts(-92.0),
            eta: 0.95,
            los_blocks: 100,
            area_m: 1000.0,
            seed: 1,
            blocks: 300,
            warmup: 20,
            los_mode: LosMode::Running,
            averaging: Averaging::Exponential,
            fading: Fading::Rician,
            normalize_fusion: false,
            ap_height_m: 10.0,
            min_distance_m: 5.0,
            angular_spread_deg: 15.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if self.aps < 1 {
            return fail("L must be at least 1");
        }
        if self.antennas < 1 {
            return fail("N must be at least 1");
        }
        if self.ues < 1 {
            return fail("K must be at least 1");
        }
        if self.tau_p < 2 {
            return fail("tau_p must be at least 2");
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return fail("eta must lie in (0, 1)");
        }
        if !self.power.is_finite() || self.power <= 0.0 {
            return fail("p must be positive");
        }
        if !self.sigma2.is_finite() || self.sigma2 < 0.0 {
            return fail("sigma2 must be nonnegative");
        }
        if self.los_blocks < 1 {
            return fail("B must be at least 1");
        }
        if !self.area_m.is_finite() || self.area_m < 0.0 {
            return fail("area_m must be nonnegative");
        }
        if self.blocks < 1 {
            return fail("blocks must be at least 1");
        }
        if self.warmup >= self.blocks {
            return fail("warmup must be smaller than blocks");
        }
        if self.min_distance_m.is_nan() || self.min_distance_m <= 0.0 {
            return fail("min_distance_m must be positive");
        }
        if self.angular_spread_deg.is_nan() || self.angular_spread_deg < 0.0 {
            return fail("angular_spread_deg must be nonnegative");
        }
        Ok(())
    }

    /// Validation for the MACE scheme, which needs at least one additional AP.
    pub fn validate_for_mace(&self) -> Result<()> {
        self.validate()?;
        if self.aps < 2 {
            return Err(SimError::InvalidConfig("L must be at least 2 for MACE".into()));
        }
        Ok(())
    }

    pub fn central_dim(&self) -> usize {
        self.aps * self.antennas
    }

    pub fn master_dim(&self) -> usize {
        self.antennas + self.aps - 1
    }
}
