//! Full plant model: vehicle, battery and the dual-motor powertrain with its
//! fitted polynomial power models.

use std::sync::Arc;

use crate::battery::BatteryParams;
use crate::powertrain::{
    fit_power_polynomial, generate_motor_map, max_torque_envelope, MotorSpec, PowerPolynomial,
};
use crate::vehicle::VehicleParams;
use crate::Result;

/// Plant state: ego position (m), speed (m/s) and battery state of charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub d: f64,
    pub v: f64,
    pub soc: f64,
}

/// Actuation applied to the plant over one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Control {
    pub t_f: f64,
    pub t_r: f64,
    pub f_b: f64,
}

/// Everything the controller and the plant share: physical parameters, motor
/// envelopes and the battery-side power polynomials.
#[derive(Debug, Clone)]
pub struct VehicleModel {
    pub vehicle: VehicleParams,
    pub battery: BatteryParams,
    pub front: MotorSpec,
    pub rear: MotorSpec,
    pub poly_front: PowerPolynomial,
    pub poly_rear: PowerPolynomial,
}

impl VehicleModel {
    /// Default IM/PMSM pair with freshly generated maps and fits.
    pub fn default_model() -> Result<Arc<Self>> {
        Self::from_parts(
            VehicleParams::default(),
            BatteryParams::default(),
            MotorSpec::default_im(),
            MotorSpec::default_pmsm(),
        )
    }

    pub fn from_parts(
        vehicle: VehicleParams,
        battery: BatteryParams,
        front: MotorSpec,
        rear: MotorSpec,
    ) -> Result<Arc<Self>> {
        vehicle.validate()?;
        battery.validate()?;
        let poly_front = fit_power_polynomial(&generate_motor_map(&front)?)?;
        let poly_rear = fit_power_polynomial(&generate_motor_map(&rear)?)?;
        Ok(Arc::new(Self {
            vehicle,
            battery,
            front,
            rear,
            poly_front,
            poly_rear,
        }))
    }

    /// Effective speed ceiling: corridor limit and motor speed limit.
    pub fn v_max_effective(&self) -> f64 {
        let omega_cap = self.front.omega_max.min(self.rear.omega_max);
        self.vehicle.v_max.min(omega_cap / self.vehicle.n)
    }

    /// Per-motor torque envelopes at vehicle speed `v`.
    pub fn envelopes_at(&self, v: f64) -> Result<(f64, f64)> {
        let omega = self.vehicle.n * v;
        Ok((
            max_torque_envelope(&self.front, omega)?,
            max_torque_envelope(&self.rear, omega)?,
        ))
    }

    /// Battery-side traction power for a torque pair at speed `v` (W).
    pub fn traction_power(&self, t_f: f64, t_r: f64, v: f64) -> f64 {
        let omega = self.vehicle.n * v;
        self.poly_front.eval(omega, t_f) + self.poly_rear.eval(omega, t_r)
    }
}
