use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Actuator and state bounds of the control problem.
///
/// Rate limits are per second; a step of length `dt` may change acceleration
/// by `jerk_max * dt` and compressor power by `p_cp_rate_max * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlLimits {
    pub accel_min: f64,
    pub accel_max: f64,
    pub jerk_max: f64,
    pub p_cp_min: f64,
    pub p_cp_max: f64,
    pub p_cp_rate_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Band shared by both modeled cells and the coolant outlet (°C).
    pub temp_min: f64,
    pub temp_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            accel_min: -2.0,
            accel_max: 2.0,
            jerk_max: 0.5,
            p_cp_min: 0.0,
            p_cp_max: 4500.0,
            p_cp_rate_max: 200.0,
            v_min: 0.0,
            v_max: 135.0 / 3.6,
            temp_min: 25.0,
            temp_max: 40.0,
        }
    }
}

impl ControlLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in [
            ("accel", self.accel_min, self.accel_max),
            ("p_cp", self.p_cp_min, self.p_cp_max),
            ("v", self.v_min, self.v_max),
            ("temp", self.temp_min, self.temp_max),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Parameter(format!("limits.{name}: need min < max, got [{lo}, {hi}]")));
            }
        }
        if !(self.accel_min < 0.0 && self.accel_max > 0.0) {
            return Err(Error::Parameter("limits: accel range must straddle zero".into()));
        }
        if !(self.jerk_max > 0.0 && self.p_cp_rate_max > 0.0) {
            return Err(Error::Parameter("limits: rate limits must be > 0".into()));
        }
        Ok(())
    }
}

/// Car-following gap policy: intelligent-driver minimum gap and a
/// time-headway based maximum gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpacingPolicy {
    /// Standstill gap (m).
    pub standstill_gap: f64,
    /// Safe time headway (s).
    pub time_headway: f64,
    /// Headway defining the traffic-efficiency upper gap (s).
    pub max_time_headway: f64,
    /// Lower floor of the upper gap (m).
    pub max_gap_floor: f64,
    /// Extra gap the controller keeps above the minimum to absorb the
    /// residual violation an exterior penalty leaves (m).
    pub safety_margin: f64,
}

impl Default for SpacingPolicy {
    fn default() -> Self {
        Self { standstill_gap: 2.0, time_headway: 1.5, max_time_headway: 5.0, max_gap_floor: 50.0, safety_margin: 0.5 }
    }
}

impl SpacingPolicy {
    pub fn max_gap(&self, v: f64) -> f64 {
        (self.standstill_gap + v * self.max_time_headway).max(self.max_gap_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.standstill_gap >= 0.0
            && self.time_headway >= 0.0
            && self.safety_margin >= 0.0
            && self.max_time_headway > self.time_headway)
        {
            return Err(Error::Parameter("spacing: need gaps and margin >= 0 and max_time_headway > time_headway".into()));
        }
        Ok(())
    }
}

/// Minimum safe gap (m) of the intelligent driver model, never below the
/// standstill gap.
pub fn idm_min_spacing(v: f64, v_pv: f64, limits: &ControlLimits, s_st: f64, t_h: f64) -> f64 {
    let braking = (-limits.accel_min * limits.accel_max).sqrt();
    (s_st + v * t_h + v * (v - v_pv) / (2.0 * braking)).max(s_st)
}
