//! Environment configuration for episode generation.
//!
//! `EnvConfig` is the documented JSON contract for the simulator: ball count,
//! horizons, raster resolution, confounder sampling ranges, arena geometry,
//! and the intervention mixture. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{CwmError, Result};

/// How episode gravity is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GravityConfig {
    /// Same gravity vector for every episode.
    Fixed { value: [f64; 2] },
    /// Per-episode magnitude and direction, sampled uniformly. Angle is in
    /// radians measured from the +x axis.
    Randomized {
        magnitude_range: [f64; 2],
        angle_range: [f64; 2],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Arena {
    pub const UNIT: Arena = Arena {
        width: 1.0,
        height: 1.0,
    };
}

impl Default for Arena {
    fn default() -> Self {
        Arena::UNIT
    }
}

/// Mixture over the two do-operators plus displacement geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionMix {
    pub removal_weight: f64,
    pub displacement_weight: f64,
    /// Displacements are drawn uniformly from a disc of this radius.
    pub displacement_radius: f64,
}

impl Default for InterventionMix {
    fn default() -> Self {
        Self {
            removal_weight: 0.5,
            displacement_weight: 0.5,
            displacement_radius: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Number of balls K.
    pub balls: usize,
    /// Factual trajectory length T (states, including t = 0).
    pub horizon_factual: usize,
    /// Counterfactual trajectory length T'.
    pub horizon_cf: usize,
    /// Raster resolution (square observations).
    pub resolution: usize,
    pub mass_range: [f64; 2],
    pub friction_range: [f64; 2],
    pub gravity: GravityConfig,
    pub radius_range: [f64; 2],
    /// Initial velocity components are uniform in [-max_speed, max_speed].
    pub max_speed: f64,
    pub arena: Arena,
    pub intervention: InterventionMix,
    /// Minimum surface gap enforced between balls at placement time.
    pub placement_gap: f64,
    /// Rejection-sampling budget for placements and interventions.
    pub max_retries: usize,
    /// Simulation time step per frame.
    pub dt: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            balls: 2,
            horizon_factual: 29,
            horizon_cf: 29,
            resolution: 50,
            mass_range: [0.5, 2.0],
            friction_range: [0.0, 0.2],
            gravity: GravityConfig::Fixed { value: [0.0, -0.5] },
            radius_range: [0.04, 0.08],
            max_speed: 0.03,
            arena: Arena::UNIT,
            intervention: InterventionMix::default(),
            placement_gap: 0.01,
            max_retries: 1000,
            dt: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CwmError::Schema(msg));
        if self.balls == 0 || self.balls > 8 {
            return fail(format!("balls must be in [1, 8], got {}", self.balls));
        }
        if self.horizon_factual < 2 || self.horizon_cf < 2 {
            return fail("horizons must be at least 2".into());
        }
        if self.resolution < 8 {
            return fail(format!("resolution must be >= 8, got {}", self.resolution));
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !range_ok(self.mass_range) || self.mass_range[0] <= 0.0 {
            return fail(format!("bad mass_range {:?}", self.mass_range));
        }
        if !range_ok(self.friction_range)
            || self.friction_range[0] < 0.0
            || self.friction_range[1] >= 1.0
        {
            return fail(format!("bad friction_range {:?}", self.friction_range));
        }
        if !range_ok(self.radius_range) || self.radius_range[0] <= 0.0 {
            return fail(format!("bad radius_range {:?}", self.radius_range));
        }
        match &self.gravity {
            GravityConfig::Fixed { value } => {
                if !value[0].is_finite() || !value[1].is_finite() {
                    return fail("gravity must be finite".into());
                }
            }
            GravityConfig::Randomized {
                magnitude_range,
                angle_range,
            } => {
                if !range_ok(*magnitude_range)
                    || magnitude_range[0] < 0.0
                    || !range_ok(*angle_range)
                {
                    return fail("bad randomized gravity ranges".into());
                }
            }
        }
        if !(self.max_speed.is_finite() && self.max_speed >= 0.0) {
            return fail("max_speed must be finite and non-negative".into());
        }
        if self.arena.width <= 0.0 || self.arena.height <= 0.0 {
            return fail("arena must have positive extent".into());
        }
        // Largest ball must fit with room to move.
        let max_r = self.radius_range[1];
        if 2.0 * max_r >= self.arena.width.min(self.arena.height) {
            return fail("radius_range too large for the arena".into());
        }
        let mix = &self.intervention;
        if mix.removal_weight < 0.0
            || mix.displacement_weight < 0.0
            || mix.removal_weight + mix.displacement_weight <= 0.0
        {
            return fail("intervention weights must be non-negative and not all zero".into());
        }
        if mix.displacement_radius <= 0.0 {
            return fail("displacement_radius must be positive".into());
        }
        if self.placement_gap < 0.0 {
            return fail("placement_gap must be non-negative".into());
        }
        if self.max_retries == 0 {
            return fail("max_retries must be positive".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return fail("dt must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_cophy_analog() {
        let cfg = EnvConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon_factual, 29);
        assert_eq!(cfg.resolution, 50);
    }

    #[test]
    fn unknown_keys_rejected() {
        let json = r#"{"balls": 2, "bogus": 1}"#;
        assert!(serde_json::from_str::<EnvConfig>(json).is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: EnvConfig = serde_json::from_str(r#"{"balls": 4}"#).unwrap();
        assert_eq!(cfg.balls, 4);
        assert_eq!(cfg.horizon_factual, 29);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = EnvConfig::default();
        cfg.friction_range = [0.0, 1.0];
        assert!(cfg.validate().is_err());

        let mut cfg = EnvConfig::default();
        cfg.balls = 9;
        assert!(cfg.validate().is_err());

        let mut cfg = EnvConfig::default();
        cfg.mass_range = [0.0, 1.0];
        assert!(cfg.validate().is_err());
    }
}
