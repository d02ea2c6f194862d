//! Rule-based torque split, the preceding-vehicle baseline replay, and the
//! two benefit metrics (SOC improvement and torque-split power improvement).

use serde::{Deserialize, Serialize};

use crate::battery::{battery_current, soc_step};
use crate::model::VehicleModel;
use crate::mpc::{LogRow, RunLog};
use crate::powertrain::{max_torque_envelope, MotorSpec};
use crate::scenario::Scenario;
use crate::vehicle::torque_from_acceleration;
use crate::{Error, Result};

/// Fixed front:rear allocation ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub n_f: f64,
    pub n_r: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { n_f: 1.0, n_r: 1.0 }
    }
}

impl SplitRatio {
    pub fn validate(&self) -> Result<()> {
        if self.n_f < 0.0 || self.n_r < 0.0 || self.n_f + self.n_r <= 0.0 {
            return Err(Error::InvalidParameter(
                "split ratio must be nonnegative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed-ratio split with envelope overflow: torque a motor cannot carry is
/// reassigned to the other one. The parts always sum to the demand exactly.
pub fn rule_based_split(
    t_d: f64,
    ratio: &SplitRatio,
    omega: f64,
    front: &MotorSpec,
    rear: &MotorSpec,
) -> Result<(f64, f64)> {
    ratio.validate()?;
    let env_f = max_torque_envelope(front, omega)?;
    let env_r = max_torque_envelope(rear, omega)?;
    if t_d.abs() > env_f + env_r + 1e-9 {
        return Err(Error::TorqueDemandExceedsEnvelope {
            demand: t_d,
            limit: env_f + env_r,
            omega,
        });
    }
    let share = ratio.n_f / (ratio.n_f + ratio.n_r);
    let mut t_f = share * t_d;
    let mut t_r = t_d - t_f;
    if t_f.abs() > env_f {
        t_f = env_f.copysign(t_f);
        t_r = t_d - t_f;
    } else if t_r.abs() > env_r {
        t_r = env_r.copysign(t_r);
        t_f = t_d - t_r;
    }
    Ok((t_f, t_r))
}

/// Split feasibility interval for the front torque at `(t_d, omega)`:
/// envelopes of both motors plus the same-sign (side-slip) requirement.
fn split_interval(t_d: f64, omega: f64, model: &VehicleModel) -> Result<(f64, f64)> {
    let env_f = max_torque_envelope(&model.front, omega)?;
    let env_r = max_torque_envelope(&model.rear, omega)?;
    if t_d.abs() > env_f + env_r + 1e-9 {
        return Err(Error::TorqueDemandExceedsEnvelope {
            demand: t_d,
            limit: env_f + env_r,
            omega,
        });
    }
    let (mut lo, mut hi) = ((-env_f).max(t_d - env_r), env_f.min(t_d + env_r));
    // Same-sign constraint: t_f and t_d - t_f may not oppose each other.
    if t_d >= 0.0 {
        lo = lo.max(0.0);
        hi = hi.min(t_d);
    } else {
        lo = lo.max(t_d);
        hi = hi.min(0.0);
    }
    Ok((lo, hi))
}

/// Electrical power of a split at shaft speed `omega`.
fn split_power(t_f: f64, t_d: f64, omega: f64, model: &VehicleModel) -> f64 {
    model.poly_front.eval(omega, t_f) + model.poly_rear.eval(omega, t_d - t_f)
}

/// Minimum-electrical-power split of demand `t_d`, by coarse grid plus
/// golden-section refinement. Deterministic.
pub fn optimal_split(t_d: f64, omega: f64, model: &VehicleModel) -> Result<(f64, f64, f64)> {
    let (lo, hi) = split_interval(t_d, omega, model)?;
    if hi - lo < 1e-12 {
        let p = split_power(lo, t_d, omega, model);
        return Ok((lo, t_d - lo, p));
    }
    let mut best_x = lo;
    let mut best_p = f64::INFINITY;
    let n_grid = 64;
    for i in 0..=n_grid {
        let x = lo + (hi - lo) * i as f64 / n_grid as f64;
        let p = split_power(x, t_d, omega, model);
        if p < best_p {
            best_p = p;
            best_x = x;
        }
    }
    let width = (hi - lo) / n_grid as f64;
    let (mut a, mut b) = ((best_x - width).max(lo), (best_x + width).min(hi));
    let gr = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - gr * (b - a), a + gr * (b - a));
    for _ in 0..80 {
        if split_power(c, t_d, omega, model) < split_power(d, t_d, omega, model) {
            b = d;
            d = c;
            c = b - gr * (b - a);
        } else {
            a = c;
            c = d;
            d = a + gr * (b - a);
        }
    }
    let x = 0.5 * (a + b);
    let p = split_power(x, t_d, omega, model);
    // The refined point can only improve on the grid incumbent.
    let (x, p) = if p <= best_p { (x, p) } else { (best_x, best_p) };
    Ok((x, t_d - x, p))
}

/// Exhaustive reference: best split on a fixed `step`-N*m grid.
pub fn brute_force_split(
    t_d: f64,
    omega: f64,
    model: &VehicleModel,
    step: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = split_interval(t_d, omega, model)?;
    let n = ((hi - lo) / step).ceil() as usize;
    let mut best = (lo, split_power(lo, t_d, omega, model));
    for i in 0..=n {
        let x = (lo + i as f64 * step).min(hi);
        let p = split_power(x, t_d, omega, model);
        if p < best.1 {
            best = (x, p);
        }
    }
    Ok(best)
}

/// Replays the preceding vehicle's own trajectory through the same powertrain
/// with the fixed-ratio split. Friction braking engages only for demand below
/// the combined regeneration envelope.
pub fn baseline_run(
    scenario: &Scenario,
    model: &VehicleModel,
    ratio: &SplitRatio,
    soc0: f64,
) -> Result<RunLog> {
    let veh = &model.vehicle;
    let mut soc = soc0;
    let mut rows = Vec::with_capacity(scenario.samples.len());
    for s in &scenario.samples {
        let phi = scenario.grade.phi_at(s.d_p);
        let omega = veh.n * s.v_p;
        let t_raw = torque_from_acceleration(s.a_p, s.v_p, phi, 0.0, veh);
        let env_f = max_torque_envelope(&model.front, omega)?;
        let env_r = max_torque_envelope(&model.rear, omega)?;
        let combined = env_f + env_r;
        let (t_m, f_b) = if t_raw < -combined {
            // Regeneration saturated: friction brake covers the remainder.
            let t_m = -combined;
            let f_b = veh.n * (t_m - t_raw);
            if f_b > veh.f_b_max + 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "baseline brake demand {f_b:.0} N exceeds F_b_max at t={}",
                    s.t
                )));
            }
            (t_m, f_b)
        } else if t_raw > combined {
            return Err(Error::TorqueDemandExceedsEnvelope {
                demand: t_raw,
                limit: combined,
                omega,
            });
        } else {
            (t_raw, 0.0)
        };
        let (t_f, t_r) = rule_based_split(t_m, ratio, omega, &model.front, &model.rear)?;
        let p_bat = model.traction_power(t_f, t_r, s.v_p);
        let i_bat = battery_current(p_bat, &model.battery)?;
        rows.push(LogRow {
            t: s.t,
            d: s.d_p,
            v: s.v_p,
            soc,
            a: s.a_p,
            t_f,
            t_r,
            p_bat,
            f_b,
            s1: 0.0,
            s2: 0.0,
            intersection: None,
            solver_status: None,
            solve_time_s: 0.0,
            solver_iterations: 0,
        });
        soc = soc_step(soc, i_bat, scenario.dt, &model.battery);
    }
    Ok(RunLog {
        rows,
        dt: scenario.dt,
        soc0,
        label: "baseline".to_string(),
    })
}

/// Relative SOC improvement of the ego over the preceding vehicle, percent.
pub fn compute_r_soc(soc_e: f64, soc_p: f64, soc_0: f64) -> Result<f64> {
    let denom = soc_0 - soc_p;
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateMetric(
            "preceding vehicle consumed no charge".into(),
        ));
    }
    Ok((soc_e - soc_p) / denom * 100.0)
}

/// Relative traction-energy improvement of the optimized split, percent.
pub fn compute_r_m(p_rule_j: f64, p_opt_j: f64) -> Result<f64> {
    if p_rule_j.abs() < 1e-12 {
        return Err(Error::DegenerateMetric("rule-based energy is zero".into()));
    }
    Ok((p_rule_j - p_opt_j) / p_rule_j * 100.0)
}

/// Split ablation: re-allocates each logged total torque with the fixed-ratio
/// rule at the logged speed and integrates both electrical power series.
/// Returns `(rule_energy_j, optimized_energy_j, r_m_percent)`.
pub fn r_m_ablation(
    log: &RunLog,
    model: &VehicleModel,
    ratio: &SplitRatio,
) -> Result<(f64, f64, f64)> {
    let mut e_rule = 0.0;
    let mut e_opt = 0.0;
    for row in &log.rows {
        let omega = model.vehicle.n * row.v;
        let t_d = row.t_f + row.t_r;
        let (rf, rr) = rule_based_split(t_d, ratio, omega, &model.front, &model.rear)?;
        e_rule += model.traction_power(rf, rr, row.v) * log.dt;
        e_opt += model.traction_power(row.t_f, row.t_r, row.v) * log.dt;
    }
    let r_m = compute_r_m(e_rule, e_opt)?;
    Ok((e_rule, e_opt, r_m))
}
