//! Equivalent-resistance battery model and SOC integration.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pack parameters. `u_oc` and `r_b` are held constant over an MPC horizon;
/// a per-cycle hook may refresh them (see [`crate::mpc`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryParams {
    /// Open-circuit voltage (V).
    pub u_oc: f64,
    /// Internal resistance (Ohm).
    pub r_b: f64,
    /// Nominal capacity (A*s). Construct from amp-hours with
    /// [`BatteryParams::with_capacity_ah`] so the 3600x conversion happens once.
    pub c_bat: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            u_oc: 360.0,
            r_b: 0.228,
            c_bat: 150.0 * 3600.0,
            soc_min: 0.0,
            soc_max: 1.0,
        }
    }
}

impl BatteryParams {
    pub fn with_capacity_ah(mut self, ah: f64) -> Self {
        self.c_bat = ah * 3600.0;
        self
    }

    /// Largest discharge power the pack can physically deliver (W).
    pub fn max_discharge_power(&self) -> f64 {
        self.u_oc * self.u_oc / (4.0 * self.r_b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_oc > 0.0 && self.r_b > 0.0 && self.c_bat > 0.0) {
            return Err(Error::InvalidParameter(
                "u_oc, r_b, c_bat must be positive".into(),
            ));
        }
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(Error::InvalidParameter(
                "require 0 <= soc_min < soc_max <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Battery current for terminal power `p_bat`; negative power (regeneration)
/// yields negative current.
pub fn battery_current(p_bat: f64, b: &BatteryParams) -> Result<f64> {
    let disc = b.u_oc * b.u_oc - 4.0 * p_bat * b.r_b;
    if !(disc >= 0.0) {
        return Err(Error::PowerExceedsBatteryLimit {
            power_w: p_bat,
            limit_w: b.max_discharge_power(),
        });
    }
    Ok((b.u_oc - disc.sqrt()) / (2.0 * b.r_b))
}

/// One forward-Euler SOC update. Bounds are enforced by the optimizer, not here.
pub fn soc_step(soc: f64, i_bat: f64, dt: f64, b: &BatteryParams) -> f64 {
    soc - i_bat * dt / b.c_bat
}
