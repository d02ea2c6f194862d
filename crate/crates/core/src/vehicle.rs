//! Longitudinal vehicle dynamics: torque, brake force, road load, motion.
//!
//! Sign convention: positive motor torque propels, friction brake force
//! `F_b >= 0` always decelerates, so
//!
//! ```text
//! m*a = n*T_m - F_g - F_r - F_a - F_b
//! ```

use serde::{Deserialize, Serialize};

/// Physical vehicle constants and actuation/motion limits.
///
/// All fields are SI. `k_w` is definitionally `C_D * rho_a * A`; use
/// [`VehicleParams::validate`] after hand-editing fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Total mass (kg).
    pub m: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Aerodynamic drag coefficient (-).
    pub c_d: f64,
    /// Air density (kg/m^3).
    pub rho_a: f64,
    /// Frontal area (m^2).
    pub frontal_area: f64,
    /// Wind-resistance coefficient `C_D * rho_a * A` (kg/m).
    pub k_w: f64,
    /// Rolling-resistance coefficient (-).
    pub mu_r: f64,
    /// Lumped drivetrain ratio: final drive ratio over effective tire radius (rad/m).
    pub n: f64,
    /// Maximum friction brake force (N).
    pub f_b_max: f64,
    /// Acceleration bounds (m/s^2).
    pub a_min: f64,
    pub a_max: f64,
    /// Corridor speed limit (m/s).
    pub v_max: f64,
    /// Comfort jerk bound (m/s^3); the operative limit is `torque_rate_max`.
    pub j_max: f64,
    /// Per-motor torque rate limit (N*m/s).
    pub torque_rate_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let c_d = 0.306;
        let rho_a = 1.205;
        let frontal_area = 2.200;
        Self {
            m: 1780.0,
            g: 9.81,
            c_d,
            rho_a,
            frontal_area,
            k_w: c_d * rho_a * frontal_area,
            // The published parameter table repeats the drivetrain ratio in the
            // rolling-resistance slot; 0.009 is a typical passenger-tire value.
            mu_r: 0.009,
            n: 22.910,
            f_b_max: 15_000.0,
            a_min: -3.0,
            a_max: 3.0,
            v_max: 20.0,
            j_max: 3.0,
            torque_rate_max: 150.0,
        }
    }
}

impl VehicleParams {
    /// Checks the structural invariants and the `k_w` definition.
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.m > 0.0) {
            return Err(invalid("m must be positive"));
        }
        if !(self.n > 0.0) {
            return Err(invalid("n must be positive"));
        }
        if !(self.f_b_max > 0.0) {
            return Err(invalid("f_b_max must be positive"));
        }
        if !(self.v_max > 0.0) {
            return Err(invalid("v_max must be positive"));
        }
        if !(self.a_min < 0.0 && 0.0 < self.a_max) {
            return Err(invalid("accel bounds must satisfy a_min < 0 < a_max"));
        }
        let kw = self.c_d * self.rho_a * self.frontal_area;
        if (self.k_w - kw).abs() > 1e-12 * kw.max(1.0) {
            return Err(invalid(&format!(
                "k_w = {} but C_D*rho_a*A = {}",
                self.k_w, kw
            )));
        }
        Ok(())
    }

    /// Recomputes `k_w` from its components.
    pub fn refresh_k_w(&mut self) {
        self.k_w = self.c_d * self.rho_a * self.frontal_area;
    }
}

fn invalid(msg: &str) -> crate::Error {
    crate::Error::InvalidParameter(msg.to_string())
}

/// Road-load forces acting against propulsion (N).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadLoad {
    /// Grade force `m*g*sin(phi)`.
    pub f_g: f64,
    /// Rolling force `mu_r*m*g*cos(phi)`.
    pub f_r: f64,
    /// Aerodynamic force `k_w*v^2/2`.
    pub f_a: f64,
}

impl RoadLoad {
    pub fn total(&self) -> f64 {
        self.f_g + self.f_r + self.f_a
    }
}

/// Grade, rolling and aerodynamic forces at speed `v` on slope `phi`.
pub fn resistive_forces(v: f64, phi: f64, p: &VehicleParams) -> RoadLoad {
    RoadLoad {
        f_g: p.m * p.g * phi.sin(),
        f_r: p.mu_r * p.m * p.g * phi.cos(),
        f_a: 0.5 * p.k_w * v * v,
    }
}

/// Longitudinal acceleration produced by total motor torque `t_m` and brake
/// force `f_b >= 0`.
pub fn acceleration_from_torque(t_m: f64, f_b: f64, v: f64, phi: f64, p: &VehicleParams) -> f64 {
    let load = resistive_forces(v, phi, p);
    (p.n * t_m - load.total() - f_b) / p.m
}

/// Total motor torque required to hold acceleration `a`; exact inverse of
/// [`acceleration_from_torque`]. Negative results mean regeneration.
pub fn torque_from_acceleration(a: f64, v: f64, phi: f64, f_b: f64, p: &VehicleParams) -> f64 {
    let load = resistive_forces(v, phi, p);
    (p.m * a + load.total() + f_b) / p.n
}

/// Motor shaft speed; both motors rotate at `n*v`.
pub fn motor_speed(v: f64, p: &VehicleParams) -> f64 {
    p.n * v
}
