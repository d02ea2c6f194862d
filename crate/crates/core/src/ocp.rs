//! Transcription of the finite-horizon speed/torque-split optimal control
//! problem into a smooth sparse NLP.
//!
//! Direct multiple shooting: states at every step are decision variables tied
//! by forward-Euler dynamics-defect equalities. Battery power is a decision
//! variable coupled to the torques through an explicit equality (otherwise
//! its cost weight would drive it unbounded). The acceleration appearing in
//! the cost and its bounds is expressed through state differences
//! `(v(k+1)-v(k))/dt`, which coincides with the dynamics value whenever the
//! defects hold.
//!
//! Decision vector layout (dimension `3(N+1) + 6N`):
//!
//! ```text
//! [d(0) v(0) soc(0) ... d(N) v(N) soc(N) |
//!  T_f(0) T_r(0) P_bat(0) F_b(0) s1(0) s2(0) | ... step N-1 ... ]
//! ```
//!
//! Slack pair `k` softens the car-following corridor at step `k+1`.

use std::sync::Arc;

use crate::model::{State, VehicleModel};
use crate::nlp::NlpProblem;
use crate::prediction::PrecedingPrediction;
use crate::scenario::{Intersection, Phase};
use crate::vehicle::VehicleParams;
use crate::{Error, Result};

/// Cost function weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            w1: 10f64.powf(1.5),
            w2: 1e-3,
            w3: 10.0,
            w4: 100.0,
            w5: 1.0,
            w6: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OcpConfig {
    /// Horizon length in steps.
    pub n_steps: usize,
    pub dt: f64,
    pub weights: Weights,
    /// Nominal time headway for the terminal distance target (s).
    pub h_head: f64,
    /// Safety time headway in the car-following corridor (s).
    pub h_min: f64,
    /// Following-distance corridor (m).
    pub d_max: f64,
    pub d_min: f64,
    pub use_terminal_distance: bool,
    pub use_terminal_speed: bool,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            n_steps: 150,
            dt: 0.1,
            weights: Weights::default(),
            h_head: 2.5,
            h_min: 0.5,
            d_max: 80.0,
            d_min: 1.0,
            use_terminal_distance: true,
            use_terminal_speed: true,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("need n_steps >= 1, dt > 0".into()));
        }
        let w = &self.weights;
        if [w.w1, w.w2, w.w3, w.w4, w.w5, w.w6].iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Index map over the flat decision vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub n: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        3 * (self.n + 1) + 6 * self.n
    }
    pub fn d(&self, k: usize) -> usize {
        3 * k
    }
    pub fn v(&self, k: usize) -> usize {
        3 * k + 1
    }
    pub fn soc(&self, k: usize) -> usize {
        3 * k + 2
    }
    fn u_base(&self) -> usize {
        3 * (self.n + 1)
    }
    pub fn t_f(&self, k: usize) -> usize {
        self.u_base() + 6 * k
    }
    pub fn t_r(&self, k: usize) -> usize {
        self.u_base() + 6 * k + 1
    }
    pub fn p_bat(&self, k: usize) -> usize {
        self.u_base() + 6 * k + 2
    }
    pub fn f_b(&self, k: usize) -> usize {
        self.u_base() + 6 * k + 3
    }
    pub fn s1(&self, k: usize) -> usize {
        self.u_base() + 6 * k + 4
    }
    pub fn s2(&self, k: usize) -> usize {
        self.u_base() + 6 * k + 5
    }
}

/// Pass-or-wait decision for one signalized intersection over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalMode {
    Pass,
    Wait,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDirective {
    pub intersection_id: u32,
    pub d_sig: f64,
    pub mode: SignalMode,
    /// Horizon steps (1..=N) falling inside a red interval; wait mode caps
    /// the ego position at these steps.
    pub red_steps: Vec<usize>,
}

/// Stop-line clearance enforced in wait mode (m).
pub const STOP_MARGIN: f64 = 2.0;
/// Speed below which stopping within the stop margin is always possible, so
/// an approach can never count as committed (m/s).
pub const COMMIT_MIN_SPEED: f64 = 3.0;
/// Upper bound on the headway slack as a fraction of `d_min`: softening the
/// following corridor must never allow model-side overlap with the
/// preceding vehicle.
pub const S2_CAP_FRACTION: f64 = 0.95;
/// Extra time required beyond the earliest arrival when electing to pass (s).
pub const PASS_BUFFER: f64 = 0.5;

/// Chooses pass/wait per intersection ahead and collects red-step windows.
///
/// Pass is elected when the signal is green now and the stop line is
/// reachable before the next red onset at full acceleration; the label
/// records the expected crossing window. Unless stopping has become
/// physically impossible (committed), the stop-line caps are emitted for
/// every horizon step inside a red interval either way, so a plan can only
/// cross during green. Modes and caps are fixed per MPC cycle and
/// re-evaluated at the next.
pub fn signal_directives(
    intersections: &[Intersection],
    t0: f64,
    x0: &State,
    n_steps: usize,
    dt: f64,
    vehicle: &VehicleParams,
    v_cap: f64,
) -> Vec<SignalDirective> {
    let mut out = Vec::new();
    for ix in intersections {
        if ix.d_sig <= x0.d + 0.01 {
            continue;
        }
        let dist = ix.d_sig - x0.d;
        let stop_dist = x0.v * x0.v / (2.0 * vehicle.a_min.abs());
        let committed = x0.v > COMMIT_MIN_SPEED && dist - STOP_MARGIN < stop_dist;
        let mode = if committed {
            SignalMode::Pass
        } else if ix.schedule.phase_at(t0) == Phase::Green {
            let t_arr = earliest_arrival(dist, x0.v, vehicle.a_max, v_cap);
            if t0 + t_arr + PASS_BUFFER <= ix.schedule.next_red_onset(t0) {
                SignalMode::Pass
            } else {
                SignalMode::Wait
            }
        } else {
            SignalMode::Wait
        };
        let red_steps = if committed {
            Vec::new()
        } else {
            (1..=n_steps)
                .filter(|&k| ix.schedule.phase_at(t0 + k as f64 * dt) == Phase::Red)
                .collect()
        };
        out.push(SignalDirective {
            intersection_id: ix.id,
            d_sig: ix.d_sig,
            mode,
            red_steps,
        });
    }
    out
}

/// Time to cover `dist` accelerating at `a_max` up to `v_cap`.
fn earliest_arrival(dist: f64, v0: f64, a_max: f64, v_cap: f64) -> f64 {
    let v0 = v0.min(v_cap);
    let t_ramp = (v_cap - v0) / a_max;
    let d_ramp = v0 * t_ramp + 0.5 * a_max * t_ramp * t_ramp;
    if dist <= d_ramp {
        ((v0 * v0 + 2.0 * a_max * dist).sqrt() - v0) / a_max
    } else {
        t_ramp + (dist - d_ramp) / v_cap
    }
}

/// Everything that varies per MPC cycle.
#[derive(Debug, Clone)]
pub struct OcpInputs {
    pub t0: f64,
    pub x0: State,
    /// Last applied torques, for rate continuity across cycle boundaries.
    pub prev_torque: Option<(f64, f64)>,
    pub prediction: PrecedingPrediction,
    pub signals: Vec<SignalDirective>,
    /// Grade at each step `k = 0..N-1`, evaluated along the reference plan.
    pub grade_by_step: Vec<f64>,
}

/// Which model constraint a row or bound realizes; `step` is the horizon
/// index it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    InitialCondition,
    PositionDefect,
    SpeedDefect,
    SocDefect,
    PowerCoupling,
    CarFollowLower,
    CarFollowUpper,
    SignalStop,
    AccelBounds,
    SideSlip,
    TorqueRateFront,
    TorqueRateRear,
    EnvelopePowerFront,
    EnvelopePowerRear,
    SpeedLimit,
    MotorSpeedLimit,
    SocLimit,
    BrakeLimit,
    StallTorqueFront,
    StallTorqueRear,
    SlackNonneg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Realization {
    Row(usize),
    VarBound(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintEntry {
    pub kind: ConstraintKind,
    pub step: usize,
    pub realization: Realization,
}

#[derive(Debug, Clone, Copy)]
struct Row {
    kind: ConstraintKind,
    k: usize,
    lo: f64,
    up: f64,
    /// Torque-rate rows use this as a boundary-row marker.
    aux: f64,
}

/// The transcribed problem. Immutable after construction; evaluation methods
/// are reentrant.
pub struct OcpProblem {
    pub layout: Layout,
    pub cfg: OcpConfig,
    pub inputs: OcpInputs,
    model: Arc<VehicleModel>,
    rows: Vec<Row>,
    registry: Vec<ConstraintEntry>,
    x_lo: Vec<f64>,
    x_up: Vec<f64>,
    jac_structure: Vec<(usize, usize)>,
    hes_structure: Vec<(usize, usize)>,
}

/// Builds the NLP for one MPC cycle.
pub fn build_ocp(
    inputs: OcpInputs,
    cfg: OcpConfig,
    model: Arc<VehicleModel>,
) -> Result<OcpProblem> {
    cfg.validate()?;
    let n = cfg.n_steps;
    let layout = Layout { n };

    if inputs.prediction.n_steps() < n {
        return Err(Error::OcpBuild(format!(
            "prediction covers {} steps, horizon needs {n}",
            inputs.prediction.n_steps()
        )));
    }
    if inputs.grade_by_step.len() < n {
        return Err(Error::OcpBuild(format!(
            "grade profile covers {} steps, horizon needs {n}",
            inputs.grade_by_step.len()
        )));
    }
    let v_cap = model.v_max_effective();
    let b = &model.battery;
    if !(0.0..=v_cap + 1e-9).contains(&inputs.x0.v)
        || !(b.soc_min - 1e-12..=b.soc_max + 1e-12).contains(&inputs.x0.soc)
    {
        return Err(Error::OcpBuild(format!(
            "initial state out of bounds: v={} soc={}",
            inputs.x0.v, inputs.x0.soc
        )));
    }

    // --- variable bounds and their registry entries -------------------------
    let dim = layout.dim();
    let mut x_lo = vec![f64::NEG_INFINITY; dim];
    let mut x_up = vec![f64::INFINITY; dim];
    let mut registry = Vec::new();

    let p_max = 0.98 * b.max_discharge_power();
    let p_min = -1.2 * (model.front.p_rated + model.rear.p_rated);
    for k in 0..=n {
        x_lo[layout.v(k)] = 0.0;
        x_up[layout.v(k)] = v_cap;
        registry.push(ConstraintEntry {
            kind: ConstraintKind::SpeedLimit,
            step: k,
            realization: Realization::VarBound(layout.v(k)),
        });
        registry.push(ConstraintEntry {
            kind: ConstraintKind::MotorSpeedLimit,
            step: k,
            realization: Realization::VarBound(layout.v(k)),
        });
        x_lo[layout.soc(k)] = b.soc_min;
        x_up[layout.soc(k)] = b.soc_max;
        registry.push(ConstraintEntry {
            kind: ConstraintKind::SocLimit,
            step: k,
            realization: Realization::VarBound(layout.soc(k)),
        });
    }
    for k in 0..n {
        x_lo[layout.t_f(k)] = -model.front.t_stall;
        x_up[layout.t_f(k)] = model.front.t_stall;
        registry.push(ConstraintEntry {
            kind: ConstraintKind::StallTorqueFront,
            step: k,
            realization: Realization::VarBound(layout.t_f(k)),
        });
        x_lo[layout.t_r(k)] = -model.rear.t_stall;
        x_up[layout.t_r(k)] = model.rear.t_stall;
        registry.push(ConstraintEntry {
            kind: ConstraintKind::StallTorqueRear,
            step: k,
            realization: Realization::VarBound(layout.t_r(k)),
        });
        x_lo[layout.p_bat(k)] = p_min;
        x_up[layout.p_bat(k)] = p_max;
        x_lo[layout.f_b(k)] = 0.0;
        x_up[layout.f_b(k)] = model.vehicle.f_b_max;
        registry.push(ConstraintEntry {
            kind: ConstraintKind::BrakeLimit,
            step: k,
            realization: Realization::VarBound(layout.f_b(k)),
        });
        for idx in [layout.s1(k), layout.s2(k)] {
            x_lo[idx] = 0.0;
            registry.push(ConstraintEntry {
                kind: ConstraintKind::SlackNonneg,
                step: k + 1,
                realization: Realization::VarBound(idx),
            });
        }
        x_up[layout.s2(k)] = S2_CAP_FRACTION * cfg.d_min;
    }

    // --- constraint rows -----------------------------------------------------
    let mut rows: Vec<Row> = Vec::new();
    let push_row = |rows: &mut Vec<Row>, registry: &mut Vec<ConstraintEntry>, row: Row| {
        registry.push(ConstraintEntry {
            kind: row.kind,
            step: row.k,
            realization: Realization::Row(rows.len()),
        });
        rows.push(row);
    };

    // Initial conditions pin the stage-0 states (z[0..3] by layout).
    for (idx, target) in [
        (0usize, inputs.x0.d),
        (1, inputs.x0.v),
        (2, inputs.x0.soc),
    ] {
        push_row(
            &mut rows,
            &mut registry,
            Row {
                kind: ConstraintKind::InitialCondition,
                k: idx,
                lo: target,
                up: target,
                aux: 0.0,
            },
        );
    }
    for k in 0..n {
        for kind in [
            ConstraintKind::PositionDefect,
            ConstraintKind::SpeedDefect,
            ConstraintKind::SocDefect,
            ConstraintKind::PowerCoupling,
        ] {
            push_row(
                &mut rows,
                &mut registry,
                Row {
                    kind,
                    k,
                    lo: 0.0,
                    up: 0.0,
                    aux: 0.0,
                },
            );
        }
    }
    for k in 1..=n {
        let d_hat = inputs.prediction.d[k];
        push_row(
            &mut rows,
            &mut registry,
            Row {
                kind: ConstraintKind::CarFollowLower,
                k,
                lo: d_hat - cfg.d_max,
                up: f64::INFINITY,
                aux: 0.0,
            },
        );
        push_row(
            &mut rows,
            &mut registry,
            Row {
                kind: ConstraintKind::CarFollowUpper,
                k,
                lo: f64::NEG_INFINITY,
                up: d_hat - cfg.d_min,
                aux: 0.0,
            },
        );
    }
    for directive in &inputs.signals {
        for &k in &directive.red_steps {
            push_row(
                &mut rows,
                &mut registry,
                Row {
                    kind: ConstraintKind::SignalStop,
                    k,
                    lo: f64::NEG_INFINITY,
                    up: directive.d_sig - STOP_MARGIN,
                    aux: 0.0,
                },
            );
        }
    }
    for k in 0..n {
        push_row(
            &mut rows,
            &mut registry,
            Row {
                kind: ConstraintKind::AccelBounds,
                k,
                lo: model.vehicle.a_min * cfg.dt,
                up: model.vehicle.a_max * cfg.dt,
                aux: 0.0,
            },
        );
    }
    for k in 0..n {
        push_row(
            &mut rows,
            &mut registry,
            Row {
                kind: ConstraintKind::SideSlip,
                k,
                lo: 0.0,
                up: f64::INFINITY,
                aux: 0.0,
            },
        );
    }
    let rate = model.vehicle.torque_rate_max * cfg.dt;
    if rate.is_finite() {
        if let Some((tf_prev, tr_prev)) = inputs.prev_torque {
            push_row(
                &mut rows,
                &mut registry,
                Row {
                    kind: ConstraintKind::TorqueRateFront,
                    k: 0,
                    lo: tf_prev - rate,
                    up: tf_prev + rate,
                    aux: 1.0,
                },
            );
            push_row(
                &mut rows,
                &mut registry,
                Row {
                    kind: ConstraintKind::TorqueRateRear,
                    k: 0,
                    lo: tr_prev - rate,
                    up: tr_prev + rate,
                    aux: 1.0,
                },
            );
        }
        for k in 0..n.saturating_sub(1) {
            push_row(
                &mut rows,
                &mut registry,
                Row {
                    kind: ConstraintKind::TorqueRateFront,
                    k: k + 1,
                    lo: -rate,
                    up: rate,
                    aux: 0.0,
                },
            );
            push_row(
                &mut rows,
                &mut registry,
                Row {
                    kind: ConstraintKind::TorqueRateRear,
                    k: k + 1,
                    lo: -rate,
                    up: rate,
                    aux: 0.0,
                },
            );
        }
    }
    for k in 0..n {
        push_row(
            &mut rows,
            &mut registry,
            Row {
                kind: ConstraintKind::EnvelopePowerFront,
                k,
                lo: -model.front.p_rated,
                up: model.front.p_rated,
                aux: 0.0,
            },
        );
        push_row(
            &mut rows,
            &mut registry,
            Row {
                kind: ConstraintKind::EnvelopePowerRear,
                k,
                lo: -model.rear.p_rated,
                up: model.rear.p_rated,
                aux: 0.0,
            },
        );
    }

    let mut problem = OcpProblem {
        layout,
        cfg,
        inputs,
        model,
        rows,
        registry,
        x_lo,
        x_up,
        jac_structure: Vec::new(),
        hes_structure: Vec::new(),
    };
    problem.jac_structure = problem.build_jacobian_structure();
    problem.hes_structure = problem.build_hessian_structure();
    Ok(problem)
}

impl OcpProblem {
    pub fn model(&self) -> &Arc<VehicleModel> {
        &self.model
    }

    pub fn registry(&self) -> &[ConstraintEntry] {
        &self.registry
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row_kind(&self, row: usize) -> (ConstraintKind, usize) {
        (self.rows[row].kind, self.rows[row].k)
    }

    /// Guarded battery current and its first two derivatives in `P`.
    ///
    /// The discriminant stays positive inside the `P_bat` bounds; the floor
    /// only protects evaluations at out-of-bound query points.
    fn current_terms(&self, p: f64) -> (f64, f64, f64) {
        let b = &self.model.battery;
        let disc = (b.u_oc * b.u_oc - 4.0 * p * b.r_b).max(1e-9 * b.u_oc * b.u_oc);
        let s = disc.sqrt();
        let i = (b.u_oc - s) / (2.0 * b.r_b);
        let di = 1.0 / s;
        let d2i = 2.0 * b.r_b / (s * s * s);
        (i, di, d2i)
    }

    fn accel_terms(&self, v: f64, t_f: f64, t_r: f64, f_b: f64, phi: f64) -> f64 {
        crate::vehicle::acceleration_from_torque(t_f + t_r, f_b, v, phi, &self.model.vehicle)
    }

    fn row_value(&self, row: &Row, z: &[f64]) -> f64 {
        let l = self.layout;
        let dt = self.cfg.dt;
        let k = row.k;
        match row.kind {
            ConstraintKind::InitialCondition => z[k],
            ConstraintKind::PositionDefect => z[l.d(k + 1)] - z[l.d(k)] - dt * z[l.v(k)],
            ConstraintKind::SpeedDefect => {
                let a = self.accel_terms(
                    z[l.v(k)],
                    z[l.t_f(k)],
                    z[l.t_r(k)],
                    z[l.f_b(k)],
                    self.inputs.grade_by_step[k],
                );
                z[l.v(k + 1)] - z[l.v(k)] - dt * a
            }
            ConstraintKind::SocDefect => {
                let (i, _, _) = self.current_terms(z[l.p_bat(k)]);
                z[l.soc(k + 1)] - z[l.soc(k)] + dt * i / self.model.battery.c_bat
            }
            ConstraintKind::PowerCoupling => {
                let omega = self.model.vehicle.n * z[l.v(k)];
                z[l.p_bat(k)]
                    - self.model.poly_front.eval(omega, z[l.t_f(k)])
                    - self.model.poly_rear.eval(omega, z[l.t_r(k)])
            }
            ConstraintKind::CarFollowLower => z[l.d(k)] + z[l.s1(k - 1)],
            ConstraintKind::CarFollowUpper => {
                z[l.d(k)] + self.cfg.h_min * z[l.v(k)] - z[l.s2(k - 1)]
            }
            ConstraintKind::SignalStop => z[l.d(k)] + self.cfg.h_min * z[l.v(k)],
            ConstraintKind::AccelBounds => z[l.v(k + 1)] - z[l.v(k)],
            ConstraintKind::SideSlip => z[l.t_f(k)] * z[l.t_r(k)],
            ConstraintKind::TorqueRateFront => {
                if row.aux > 0.0 {
                    z[l.t_f(0)]
                } else {
                    z[l.t_f(k)] - z[l.t_f(k - 1)]
                }
            }
            ConstraintKind::TorqueRateRear => {
                if row.aux > 0.0 {
                    z[l.t_r(0)]
                } else {
                    z[l.t_r(k)] - z[l.t_r(k - 1)]
                }
            }
            ConstraintKind::EnvelopePowerFront => self.model.vehicle.n * z[l.v(k)] * z[l.t_f(k)],
            ConstraintKind::EnvelopePowerRear => self.model.vehicle.n * z[l.v(k)] * z[l.t_r(k)],
            _ => unreachable!("bound-realized kinds never appear as rows"),
        }
    }

    /// Column indices of a row's Jacobian entries, in a fixed order.
    fn row_cols(&self, row: &Row) -> Vec<usize> {
        let l = self.layout;
        let k = row.k;
        match row.kind {
            ConstraintKind::InitialCondition => vec![k],
            ConstraintKind::PositionDefect => vec![l.d(k + 1), l.d(k), l.v(k)],
            ConstraintKind::SpeedDefect => {
                vec![l.v(k + 1), l.v(k), l.t_f(k), l.t_r(k), l.f_b(k)]
            }
            ConstraintKind::SocDefect => vec![l.soc(k + 1), l.soc(k), l.p_bat(k)],
            ConstraintKind::PowerCoupling => vec![l.p_bat(k), l.v(k), l.t_f(k), l.t_r(k)],
            ConstraintKind::CarFollowLower => vec![l.d(k), l.s1(k - 1)],
            ConstraintKind::CarFollowUpper => vec![l.d(k), l.v(k), l.s2(k - 1)],
            ConstraintKind::SignalStop => vec![l.d(k), l.v(k)],
            ConstraintKind::AccelBounds => vec![l.v(k + 1), l.v(k)],
            ConstraintKind::SideSlip => vec![l.t_f(k), l.t_r(k)],
            ConstraintKind::TorqueRateFront => {
                if row.aux > 0.0 {
                    vec![l.t_f(0)]
                } else {
                    vec![l.t_f(k), l.t_f(k - 1)]
                }
            }
            ConstraintKind::TorqueRateRear => {
                if row.aux > 0.0 {
                    vec![l.t_r(0)]
                } else {
                    vec![l.t_r(k), l.t_r(k - 1)]
                }
            }
            ConstraintKind::EnvelopePowerFront => vec![l.v(k), l.t_f(k)],
            ConstraintKind::EnvelopePowerRear => vec![l.v(k), l.t_r(k)],
            _ => unreachable!(),
        }
    }

    /// Jacobian values matching [`Self::row_cols`] order.
    fn row_jac(&self, row: &Row, z: &[f64], out: &mut Vec<f64>) {
        let l = self.layout;
        let dt = self.cfg.dt;
        let veh = &self.model.vehicle;
        let k = row.k;
        match row.kind {
            ConstraintKind::InitialCondition => out.push(1.0),
            ConstraintKind::PositionDefect => out.extend_from_slice(&[1.0, -1.0, -dt]),
            ConstraintKind::SpeedDefect => {
                let v = z[l.v(k)];
                out.extend_from_slice(&[
                    1.0,
                    -1.0 + dt * veh.k_w * v / veh.m,
                    -dt * veh.n / veh.m,
                    -dt * veh.n / veh.m,
                    dt / veh.m,
                ]);
            }
            ConstraintKind::SocDefect => {
                let (_, di, _) = self.current_terms(z[l.p_bat(k)]);
                out.extend_from_slice(&[1.0, -1.0, dt * di / self.model.battery.c_bat]);
            }
            ConstraintKind::PowerCoupling => {
                let omega = veh.n * z[l.v(k)];
                let (_, pf_o, pf_t) = self.model.poly_front.eval_with_grad(omega, z[l.t_f(k)]);
                let (_, pr_o, pr_t) = self.model.poly_rear.eval_with_grad(omega, z[l.t_r(k)]);
                out.extend_from_slice(&[1.0, -veh.n * (pf_o + pr_o), -pf_t, -pr_t]);
            }
            ConstraintKind::CarFollowLower => out.extend_from_slice(&[1.0, 1.0]),
            ConstraintKind::CarFollowUpper => out.extend_from_slice(&[1.0, self.cfg.h_min, -1.0]),
            ConstraintKind::SignalStop => out.extend_from_slice(&[1.0, self.cfg.h_min]),
            ConstraintKind::AccelBounds => out.extend_from_slice(&[1.0, -1.0]),
            ConstraintKind::SideSlip => out.extend_from_slice(&[z[l.t_r(k)], z[l.t_f(k)]]),
            ConstraintKind::TorqueRateFront | ConstraintKind::TorqueRateRear => {
                if row.aux > 0.0 {
                    out.push(1.0);
                } else {
                    out.extend_from_slice(&[1.0, -1.0]);
                }
            }
            ConstraintKind::EnvelopePowerFront => {
                out.extend_from_slice(&[veh.n * z[l.t_f(k)], veh.n * z[l.v(k)]]);
            }
            ConstraintKind::EnvelopePowerRear => {
                out.extend_from_slice(&[veh.n * z[l.t_r(k)], veh.n * z[l.v(k)]]);
            }
            _ => unreachable!(),
        }
    }

    fn build_jacobian_structure(&self) -> Vec<(usize, usize)> {
        let mut pat = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            for col in self.row_cols(row) {
                pat.push((r, col));
            }
        }
        pat
    }

    /// Hessian entries, lower triangle, in a fixed source order. Duplicate
    /// coordinates are allowed and accumulate.
    fn build_hessian_structure(&self) -> Vec<(usize, usize)> {
        let l = self.layout;
        let n = l.n;
        let mut pat = Vec::new();
        // Objective: acceleration smoothing couples (v(k), v(k+1)).
        for k in 0..n {
            pat.push((l.v(k), l.v(k)));
            pat.push((l.v(k + 1), l.v(k)));
            pat.push((l.v(k + 1), l.v(k + 1)));
        }
        // Objective: terminal terms and slack penalties.
        pat.push((l.d(n), l.d(n)));
        pat.push((l.v(n), l.v(n)));
        for k in 0..n {
            pat.push((l.s1(k), l.s1(k)));
            pat.push((l.s2(k), l.s2(k)));
        }
        // Constraint curvature, stage-local blocks.
        for row in &self.rows {
            let k = row.k;
            match row.kind {
                ConstraintKind::SpeedDefect => pat.push((l.v(k), l.v(k))),
                ConstraintKind::SocDefect => pat.push((l.p_bat(k), l.p_bat(k))),
                ConstraintKind::PowerCoupling => {
                    pat.push((l.v(k), l.v(k)));
                    pat.push((l.t_f(k), l.v(k)));
                    pat.push((l.t_r(k), l.v(k)));
                    pat.push((l.t_f(k), l.t_f(k)));
                    pat.push((l.t_r(k), l.t_r(k)));
                }
                ConstraintKind::SideSlip => pat.push((l.t_r(k), l.t_f(k))),
                ConstraintKind::EnvelopePowerFront => pat.push((l.t_f(k), l.v(k))),
                ConstraintKind::EnvelopePowerRear => pat.push((l.t_r(k), l.v(k))),
                _ => {}
            }
        }
        pat
    }

    /// Cost, residuals and derivatives at `z`, bundled for inspection/tests.
    pub fn evaluate(&self, z: &[f64]) -> Result<Evaluation> {
        self.check_dims(z)?;
        let mut gradient = vec![0.0; self.num_vars()];
        self.gradient(z, &mut gradient);
        let mut constraint_values = vec![0.0; self.rows.len()];
        self.constraints(z, &mut constraint_values);
        let mut jac = vec![0.0; self.jac_structure.len()];
        self.jacobian_values(z, &mut jac);
        let jacobian = self
            .jac_structure
            .iter()
            .zip(&jac)
            .map(|(&(r, c), &v)| (r, c, v))
            .collect();
        Ok(Evaluation {
            objective: self.objective(z),
            constraint_values,
            gradient,
            jacobian,
        })
    }

    /// Forward integration of a control sequence through the transcription's
    /// own dynamics (same formulas as the defect rows).
    pub fn integrate_controls(
        &self,
        x0: State,
        controls: impl Iterator<Item = (f64, f64, f64)>,
    ) -> Vec<State> {
        let mut states = vec![x0];
        let dt = self.cfg.dt;
        for (k, (t_f, t_r, f_b)) in controls.enumerate() {
            let s = *states.last().unwrap();
            let phi = self.inputs.grade_by_step[k.min(self.inputs.grade_by_step.len() - 1)];
            let a = self.accel_terms(s.v, t_f, t_r, f_b, phi);
            let p = self.model.traction_power(t_f, t_r, s.v);
            let (i, _, _) = self.current_terms(p);
            states.push(State {
                d: s.d + dt * s.v,
                v: (s.v + dt * a).max(0.0),
                soc: s.soc - dt * i / self.model.battery.c_bat,
            });
        }
        states
    }

    /// Dimensions, bounds and sparsity summary for debugging.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "variables: {}", self.num_vars());
        let _ = writeln!(s, "rows: {}", self.rows.len());
        let mut counts: Vec<(ConstraintKind, usize)> = Vec::new();
        for row in &self.rows {
            match counts.iter_mut().find(|(k, _)| *k == row.kind) {
                Some((_, c)) => *c += 1,
                None => counts.push((row.kind, 1)),
            }
        }
        for (kind, c) in counts {
            let _ = writeln!(s, "  {kind:?}: {c}");
        }
        let _ = writeln!(s, "jacobian nnz: {}", self.jac_structure.len());
        let _ = writeln!(s, "hessian nnz: {}", self.hes_structure.len());
        let bounded = self
            .x_lo
            .iter()
            .zip(&self.x_up)
            .filter(|(l, u)| l.is_finite() || u.is_finite())
            .count();
        let _ = writeln!(s, "bounded variables: {bounded}");
        s
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub constraint_values: Vec<f64>,
    pub gradient: Vec<f64>,
    pub jacobian: Vec<(usize, usize, f64)>,
}

impl NlpProblem for OcpProblem {
    fn num_vars(&self) -> usize {
        self.layout.dim()
    }

    fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.x_lo.clone(), self.x_up.clone())
    }

    fn constraint_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.rows.iter().map(|r| r.lo).collect(),
            self.rows.iter().map(|r| r.up).collect(),
        )
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let l = self.layout;
        let n = l.n;
        let w = &self.cfg.weights;
        let dt = self.cfg.dt;
        let mut j = 0.0;
        for k in 0..n {
            let a = (z[l.v(k + 1)] - z[l.v(k)]) / dt;
            j += w.w1 * a * a + w.w2 * z[l.p_bat(k)];
            j += w.w5 * z[l.s1(k)] * z[l.s1(k)] + w.w6 * z[l.s2(k)] * z[l.s2(k)];
        }
        let pred = &self.inputs.prediction;
        if self.cfg.use_terminal_distance {
            let e = pred.d[n] - z[l.d(n)] - self.cfg.h_head * pred.v[n] - self.cfg.d_min;
            j += w.w3 * e * e;
        }
        if self.cfg.use_terminal_speed {
            let e = z[l.v(n)] - pred.v[n];
            j += w.w4 * e * e;
        }
        j
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let l = self.layout;
        let n = l.n;
        let w = &self.cfg.weights;
        let dt = self.cfg.dt;
        for k in 0..n {
            let a = (z[l.v(k + 1)] - z[l.v(k)]) / dt;
            grad[l.v(k + 1)] += 2.0 * w.w1 * a / dt;
            grad[l.v(k)] -= 2.0 * w.w1 * a / dt;
            grad[l.p_bat(k)] += w.w2;
            grad[l.s1(k)] += 2.0 * w.w5 * z[l.s1(k)];
            grad[l.s2(k)] += 2.0 * w.w6 * z[l.s2(k)];
        }
        let pred = &self.inputs.prediction;
        if self.cfg.use_terminal_distance {
            let e = pred.d[n] - z[l.d(n)] - self.cfg.h_head * pred.v[n] - self.cfg.d_min;
            grad[l.d(n)] -= 2.0 * w.w3 * e;
        }
        if self.cfg.use_terminal_speed {
            grad[l.v(n)] += 2.0 * w.w4 * (z[l.v(n)] - pred.v[n]);
        }
    }

    fn constraints(&self, z: &[f64], c: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            c[i] = self.row_value(row, z);
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.jac_structure.clone()
    }

    fn jacobian_values(&self, z: &[f64], vals: &mut [f64]) {
        let mut buf = Vec::with_capacity(8);
        let mut at = 0;
        for row in &self.rows {
            buf.clear();
            self.row_jac(row, z, &mut buf);
            vals[at..at + buf.len()].copy_from_slice(&buf);
            at += buf.len();
        }
        debug_assert_eq!(at, vals.len());
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.hes_structure.clone()
    }

    fn hessian_values(&self, z: &[f64], sigma: f64, y: &[f64], vals: &mut [f64]) {
        let l = self.layout;
        let n = l.n;
        let w = &self.cfg.weights;
        let dt = self.cfg.dt;
        let mut at = 0;
        let q = 2.0 * w.w1 / (dt * dt);
        for _k in 0..n {
            vals[at] = sigma * q;
            vals[at + 1] = -sigma * q;
            vals[at + 2] = sigma * q;
            at += 3;
        }
        vals[at] = if self.cfg.use_terminal_distance {
            sigma * 2.0 * w.w3
        } else {
            0.0
        };
        vals[at + 1] = if self.cfg.use_terminal_speed {
            sigma * 2.0 * w.w4
        } else {
            0.0
        };
        at += 2;
        for _k in 0..n {
            vals[at] = sigma * 2.0 * w.w5;
            vals[at + 1] = sigma * 2.0 * w.w6;
            at += 2;
        }
        let veh = &self.model.vehicle;
        for (r, row) in self.rows.iter().enumerate() {
            let k = row.k;
            match row.kind {
                ConstraintKind::SpeedDefect => {
                    vals[at] = y[r] * dt * veh.k_w / veh.m;
                    at += 1;
                }
                ConstraintKind::SocDefect => {
                    let (_, _, d2i) = self.current_terms(z[l.p_bat(k)]);
                    vals[at] = y[r] * dt * d2i / self.model.battery.c_bat;
                    at += 1;
                }
                ConstraintKind::PowerCoupling => {
                    let omega = veh.n * z[l.v(k)];
                    let (pf_oo, pf_ot, pf_tt) =
                        self.model.poly_front.second_partials(omega, z[l.t_f(k)]);
                    let (pr_oo, pr_ot, pr_tt) =
                        self.model.poly_rear.second_partials(omega, z[l.t_r(k)]);
                    vals[at] = -y[r] * veh.n * veh.n * (pf_oo + pr_oo);
                    vals[at + 1] = -y[r] * veh.n * pf_ot;
                    vals[at + 2] = -y[r] * veh.n * pr_ot;
                    vals[at + 3] = -y[r] * pf_tt;
                    vals[at + 4] = -y[r] * pr_tt;
                    at += 5;
                }
                ConstraintKind::SideSlip => {
                    vals[at] = y[r];
                    at += 1;
                }
                ConstraintKind::EnvelopePowerFront | ConstraintKind::EnvelopePowerRear => {
                    vals[at] = y[r] * veh.n;
                    at += 1;
                }
                _ => {}
            }
        }
        debug_assert_eq!(at, vals.len());
    }

    fn var_scaling(&self) -> Vec<f64> {
        let l = self.layout;
        let mut s = vec![1.0; self.num_vars()];
        for k in 0..l.n {
            s[l.t_f(k)] = 1e2;
            s[l.t_r(k)] = 1e2;
            s[l.p_bat(k)] = 1e4;
            s[l.f_b(k)] = 1e3;
        }
        s
    }
}

/// Previous plan carried between MPC cycles for warm starting.
#[derive(Debug, Clone)]
pub struct PrevPlan {
    pub z: Vec<f64>,
    /// Steps the receding horizon advanced since the plan was made.
    pub shift_steps: usize,
}

/// Shift-initialized start: previous plan moved by the update interval with
/// the tail re-integrated under the duplicated last control; cold start is a
/// constant-speed profile with the speed-hold torque split evenly.
pub fn warm_start(problem: &OcpProblem, prev: Option<&PrevPlan>) -> Vec<f64> {
    match prev {
        Some(plan) => shifted_start(problem, plan),
        None => cold_start(problem),
    }
}

pub fn cold_start(problem: &OcpProblem) -> Vec<f64> {
    let l = problem.layout;
    let n = l.n;
    let dt = problem.cfg.dt;
    let model = &problem.model;
    let x0 = problem.inputs.x0;
    let mut z = vec![0.0; l.dim()];

    z[l.d(0)] = x0.d;
    z[l.v(0)] = x0.v;
    z[l.soc(0)] = x0.soc;
    for k in 0..n {
        let phi = problem.inputs.grade_by_step[k];
        let t_hold = crate::vehicle::torque_from_acceleration(0.0, x0.v, phi, 0.0, &model.vehicle);
        let omega = model.vehicle.n * x0.v;
        let (t_f, t_r) = crate::baseline::rule_based_split(
            t_hold,
            &crate::baseline::SplitRatio::default(),
            omega,
            &model.front,
            &model.rear,
        )
        .unwrap_or((t_hold / 2.0, t_hold / 2.0));
        let p = model.traction_power(t_f, t_r, x0.v);
        let (i, _, _) = problem.current_terms(p);
        z[l.t_f(k)] = t_f;
        z[l.t_r(k)] = t_r;
        z[l.p_bat(k)] = p;
        z[l.f_b(k)] = 0.0;
        z[l.d(k + 1)] = z[l.d(k)] + dt * x0.v;
        z[l.v(k + 1)] = x0.v;
        z[l.soc(k + 1)] = z[l.soc(k)] - dt * i / model.battery.c_bat;
    }
    set_feasible_slacks(problem, &mut z);
    z
}

fn shifted_start(problem: &OcpProblem, plan: &PrevPlan) -> Vec<f64> {
    let l = problem.layout;
    let n = l.n;
    let m = plan.shift_steps.min(n);
    let dt = problem.cfg.dt;
    let model = &problem.model;
    let mut z = vec![0.0; l.dim()];

    // States: pin stage 0 to the measured state, copy the shifted plan.
    let x0 = problem.inputs.x0;
    z[l.d(0)] = x0.d;
    z[l.v(0)] = x0.v;
    z[l.soc(0)] = x0.soc;
    for k in 1..=n {
        let src = k + m;
        if src <= n {
            z[l.d(k)] = plan.z[l.d(src)];
            z[l.v(k)] = plan.z[l.v(src)];
            z[l.soc(k)] = plan.z[l.soc(src)];
        }
    }
    for k in 0..n {
        let src = (k + m).min(n - 1);
        z[l.t_f(k)] = plan.z[l.t_f(src)];
        z[l.t_r(k)] = plan.z[l.t_r(src)];
        z[l.p_bat(k)] = plan.z[l.p_bat(src)];
        z[l.f_b(k)] = plan.z[l.f_b(src)];
    }
    // Re-integrate the duplicated tail so defects stay small.
    let first_tail = n.saturating_sub(m);
    for k in first_tail..n {
        let phi = problem.inputs.grade_by_step[k];
        let (v, d, soc) = (z[l.v(k)], z[l.d(k)], z[l.soc(k)]);
        let a = problem.accel_terms(v, z[l.t_f(k)], z[l.t_r(k)], z[l.f_b(k)], phi);
        let p = model.traction_power(z[l.t_f(k)], z[l.t_r(k)], v);
        let (i, _, _) = problem.current_terms(p);
        z[l.p_bat(k)] = p;
        z[l.d(k + 1)] = d + dt * v;
        z[l.v(k + 1)] = (v + dt * a).clamp(0.0, model.v_max_effective());
        z[l.soc(k + 1)] = soc - dt * i / model.battery.c_bat;
    }
    set_feasible_slacks(problem, &mut z);
    z
}

/// Sets each slack to the smallest value satisfying its car-following row.
fn set_feasible_slacks(problem: &OcpProblem, z: &mut [f64]) {
    let l = problem.layout;
    let pred = &problem.inputs.prediction;
    for k in 1..=l.n {
        let d_hat = pred.d[k];
        z[l.s1(k - 1)] = (d_hat - problem.cfg.d_max - z[l.d(k)]).max(0.0);
        z[l.s2(k - 1)] =
            (z[l.d(k)] + problem.cfg.h_min * z[l.v(k)] - (d_hat - problem.cfg.d_min)).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::predict_preceding;
    use crate::scenario::{generate_corridor_scenario, CorridorConfig};
    use approx::assert_relative_eq;

    fn toy_inputs(n: usize) -> OcpInputs {
        // Stationary preceding vehicle 50 m ahead of a slow ego.
        let pred = PrecedingPrediction {
            t0: 0.0,
            dt: 0.1,
            d: vec![50.0; n + 1],
            v: vec![0.0; n + 1],
            a: vec![0.0; n + 1],
        };
        OcpInputs {
            t0: 0.0,
            x0: State {
                d: 0.0,
                v: 2.0,
                soc: 0.8,
            },
            prev_torque: None,
            prediction: pred,
            signals: Vec::new(),
            grade_by_step: vec![0.0; n],
        }
    }

    fn build_toy(n: usize) -> OcpProblem {
        let model = VehicleModel::default_model().unwrap();
        let cfg = OcpConfig {
            n_steps: n,
            ..OcpConfig::default()
        };
        build_ocp(toy_inputs(n), cfg, model).unwrap()
    }

    #[test]
    fn decision_dimension_matches_layout_formula() {
        let p = build_toy(150);
        assert_eq!(p.num_vars(), 3 * 151 + 6 * 150);
        assert_eq!(p.num_vars(), 1353);
    }

    #[test]
    fn registry_realizes_every_row_exactly_once() {
        let p = build_toy(20);
        let mut row_seen = vec![0usize; p.num_rows()];
        for e in p.registry() {
            if let Realization::Row(r) = e.realization {
                row_seen[r] += 1;
            }
        }
        assert!(row_seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn registry_covers_all_model_constraints() {
        let p = build_toy(20);
        let count = |kind: ConstraintKind| p.registry().iter().filter(|e| e.kind == kind).count();
        let n = 20;
        assert_eq!(count(ConstraintKind::InitialCondition), 3);
        assert_eq!(count(ConstraintKind::PositionDefect), n);
        assert_eq!(count(ConstraintKind::SpeedDefect), n);
        assert_eq!(count(ConstraintKind::SocDefect), n);
        assert_eq!(count(ConstraintKind::PowerCoupling), n);
        assert_eq!(count(ConstraintKind::CarFollowLower), n);
        assert_eq!(count(ConstraintKind::CarFollowUpper), n);
        assert_eq!(count(ConstraintKind::AccelBounds), n);
        assert_eq!(count(ConstraintKind::SideSlip), n);
        assert_eq!(count(ConstraintKind::TorqueRateFront), n - 1);
        assert_eq!(count(ConstraintKind::TorqueRateRear), n - 1);
        assert_eq!(count(ConstraintKind::EnvelopePowerFront), n);
        assert_eq!(count(ConstraintKind::EnvelopePowerRear), n);
        assert_eq!(count(ConstraintKind::SpeedLimit), n + 1);
        assert_eq!(count(ConstraintKind::MotorSpeedLimit), n + 1);
        assert_eq!(count(ConstraintKind::SocLimit), n + 1);
        assert_eq!(count(ConstraintKind::BrakeLimit), n);
        assert_eq!(count(ConstraintKind::StallTorqueFront), n);
        assert_eq!(count(ConstraintKind::StallTorqueRear), n);
        assert_eq!(count(ConstraintKind::SlackNonneg), 2 * n);
    }

    #[test]
    fn cost_at_zero_point_matches_hand_evaluation() {
        // All-zero controls, v = 0 everywhere, slack-free, stationary target.
        let n = 10;
        let model = VehicleModel::default_model().unwrap();
        let mut inputs = toy_inputs(n);
        inputs.x0.v = 0.0;
        let cfg = OcpConfig {
            n_steps: n,
            ..OcpConfig::default()
        };
        let p = build_ocp(inputs, cfg.clone(), model).unwrap();
        let mut z = vec![0.0; p.num_vars()];
        for k in 0..=n {
            z[p.layout.soc(k)] = 0.8;
        }
        // Terminal distance term only: w3 (d_hat - d - d_min)^2, speed targets zero.
        let expected = cfg.weights.w3 * (50.0 - 0.0 - cfg.d_min).powi(2);
        assert_relative_eq!(p.objective(&z), expected, max_relative = 1e-12);
    }

    #[test]
    fn doubling_slack_quadruples_slack_cost() {
        let p = build_toy(10);
        let mut z = cold_start(&p);
        let base = p.objective(&z);
        for k in 0..10 {
            z[p.layout.s1(k)] = 1.0;
        }
        let j1 = p.objective(&z) - base;
        for k in 0..10 {
            z[p.layout.s1(k)] = 2.0;
        }
        let j2 = p.objective(&z) - base;
        assert_relative_eq!(j2, 4.0 * j1, max_relative = 1e-12);
    }

    #[test]
    fn zero_w2_makes_cost_invariant_to_p_bat() {
        let n = 10;
        let model = VehicleModel::default_model().unwrap();
        let mut cfg = OcpConfig {
            n_steps: n,
            ..OcpConfig::default()
        };
        cfg.weights.w2 = 0.0;
        let p = build_ocp(toy_inputs(n), cfg, model).unwrap();
        let mut z = cold_start(&p);
        let j0 = p.objective(&z);
        for k in 0..n {
            z[p.layout.p_bat(k)] += 12_345.0;
        }
        assert_eq!(p.objective(&z), j0);
    }

    #[test]
    fn cold_start_satisfies_dynamics_defects() {
        let p = build_toy(50);
        let z = cold_start(&p);
        let mut c = vec![0.0; p.num_rows()];
        p.constraints(&z, &mut c);
        for (i, row) in p.rows.iter().enumerate() {
            let defect = matches!(
                row.kind,
                ConstraintKind::PositionDefect
                    | ConstraintKind::SpeedDefect
                    | ConstraintKind::SocDefect
                    | ConstraintKind::PowerCoupling
                    | ConstraintKind::InitialCondition
            );
            if defect {
                assert!(
                    (c[i] - row.lo).abs() <= 1e-6,
                    "{:?} step {} residual {}",
                    row.kind,
                    row.k,
                    c[i] - row.lo
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = build_toy(8);
        let mut z = cold_start(&p);
        // A generic interior perturbation.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        let mut grad = vec![0.0; p.num_vars()];
        p.gradient(&z, &mut grad);
        let h = 1e-6;
        for i in (0..p.num_vars()).step_by(7) {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (p.objective(&zp) - p.objective(&zm)) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, max_relative = 1e-5, epsilon = 1e-5);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_spot_check() {
        let p = build_toy(6);
        let mut z = cold_start(&p);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let structure = p.jacobian_structure();
        let mut vals = vec![0.0; structure.len()];
        p.jacobian_values(&z, &mut vals);
        let m = p.num_rows();
        let h = 1e-6;
        let mut dense = vec![vec![0.0; p.num_vars()]; m];
        for col in 0..p.num_vars() {
            let mut zp = z.clone();
            zp[col] += h;
            let mut zm = z.clone();
            zm[col] -= h;
            let mut cp = vec![0.0; m];
            let mut cm = vec![0.0; m];
            p.constraints(&zp, &mut cp);
            p.constraints(&zm, &mut cm);
            for r in 0..m {
                dense[r][col] = (cp[r] - cm[r]) / (2.0 * h);
            }
        }
        let mut sparse = vec![vec![0.0; p.num_vars()]; m];
        for (&(r, c), &v) in structure.iter().zip(&vals) {
            sparse[r][c] += v;
        }
        for r in 0..m {
            for c in 0..p.num_vars() {
                assert_relative_eq!(
                    sparse[r][c],
                    dense[r][c],
                    max_relative = 1e-5,
                    epsilon = 1e-5
                );
            }
        }
    }

    #[test]
    fn prediction_shorter_than_horizon_rejected() {
        let model = VehicleModel::default_model().unwrap();
        let mut inputs = toy_inputs(10);
        inputs.prediction.d.truncate(5);
        inputs.prediction.v.truncate(5);
        inputs.prediction.a.truncate(5);
        let cfg = OcpConfig {
            n_steps: 10,
            ..OcpConfig::default()
        };
        assert!(matches!(
            build_ocp(inputs, cfg, model),
            Err(Error::OcpBuild(_))
        ));
    }

    #[test]
    fn infeasible_initial_state_rejected() {
        let model = VehicleModel::default_model().unwrap();
        let mut inputs = toy_inputs(10);
        inputs.x0.v = 99.0;
        let cfg = OcpConfig {
            n_steps: 10,
            ..OcpConfig::default()
        };
        assert!(build_ocp(inputs, cfg, model).is_err());
    }

    #[test]
    fn signal_directives_pass_and_wait() {
        let sc = generate_corridor_scenario(0, &CorridorConfig::default());
        let veh = VehicleParams::default();
        let x0 = State {
            d: 0.0,
            v: 10.0,
            soc: 0.8,
        };
        let ix = &sc.intersections[0];
        let mut t_red = None;
        let mut t_green = None;
        for k in 0..2000 {
            let t = k as f64 * 0.1;
            match ix.schedule.phase_at(t) {
                Phase::Red if t_red.is_none() => t_red = Some(t),
                Phase::Green if t_green.is_none() => t_green = Some(t),
                _ => {}
            }
        }
        let dirs = signal_directives(&sc.intersections, t_red.unwrap(), &x0, 150, 0.1, &veh, 20.0);
        let first = dirs.iter().find(|d| d.intersection_id == ix.id).unwrap();
        assert_eq!(first.mode, SignalMode::Wait);
        assert!(!first.red_steps.is_empty());

        // Green just ahead of the line at speed: a clear pass.
        let near = State {
            d: ix.d_sig - 30.0,
            v: 15.0,
            soc: 0.8,
        };
        let dirs =
            signal_directives(&sc.intersections, t_green.unwrap(), &near, 150, 0.1, &veh, 20.0);
        let first = dirs.iter().find(|d| d.intersection_id == ix.id).unwrap();
        assert_eq!(first.mode, SignalMode::Pass);
        // Red-window caps stay active while stopping is still possible.
        assert!(first.red_steps.iter().all(|&k| {
            ix.schedule.phase_at(t_green.unwrap() + k as f64 * 0.1) == Phase::Red
        }));
    }

    #[test]
    fn committed_vehicle_passes_even_on_red() {
        let sc = generate_corridor_scenario(0, &CorridorConfig::default());
        let veh = VehicleParams::default();
        let ix = &sc.intersections[0];
        let mut t_red = 0.0;
        for k in 0..2000 {
            let t = k as f64 * 0.1;
            if ix.schedule.phase_at(t) == Phase::Red {
                t_red = t;
                break;
            }
        }
        // 5 m from the line at 15 m/s: stopping needs 37.5 m, impossible.
        let x0 = State {
            d: ix.d_sig - 5.0,
            v: 15.0,
            soc: 0.8,
        };
        let dirs = signal_directives(&sc.intersections, t_red, &x0, 150, 0.1, &veh, 20.0);
        let first = dirs.iter().find(|d| d.intersection_id == ix.id).unwrap();
        assert_eq!(first.mode, SignalMode::Pass);
        // Committed: no caps, the line must be crossed.
        assert!(first.red_steps.is_empty());
    }

    #[test]
    fn warm_start_from_real_scenario_is_consistent() {
        let sc = generate_corridor_scenario(1, &CorridorConfig::default());
        let model = VehicleModel::default_model().unwrap();
        let pred = predict_preceding(&sc, 0.0, 150, 0.1).unwrap();
        let x0 = State {
            d: pred.d[0] - 40.0,
            v: pred.v[0],
            soc: 0.8,
        };
        let inputs = OcpInputs {
            t0: 0.0,
            x0,
            prev_torque: None,
            prediction: pred,
            signals: Vec::new(),
            grade_by_step: vec![0.0; 150],
        };
        let p = build_ocp(inputs, OcpConfig::default(), model).unwrap();
        let z = warm_start(&p, None);
        let mut c = vec![0.0; p.num_rows()];
        p.constraints(&z, &mut c);
        for (i, row) in p.rows.iter().enumerate() {
            if matches!(
                row.kind,
                ConstraintKind::PositionDefect
                    | ConstraintKind::SpeedDefect
                    | ConstraintKind::SocDefect
            ) {
                assert!(c[i].abs() <= 1e-6, "{:?} residual {}", row.kind, c[i]);
            }
        }
    }

    #[test]
    fn shifted_plan_preserves_rate_feasibility_in_overlap() {
        let p = build_toy(12);
        // Fabricate a rate-feasible plan: torques ramp gently.
        let mut z = cold_start(&p);
        for k in 0..12 {
            z[p.layout.t_f(k)] = 10.0 + k as f64;
            z[p.layout.t_r(k)] = 5.0 + 0.5 * k as f64;
        }
        let plan = PrevPlan {
            z: z.clone(),
            shift_steps: 3,
        };
        let shifted = warm_start(&p, Some(&plan));
        let rate = p.model.vehicle.torque_rate_max * p.cfg.dt;
        for k in 0..11 {
            let df = shifted[p.layout.t_f(k + 1)] - shifted[p.layout.t_f(k)];
            let dr = shifted[p.layout.t_r(k + 1)] - shifted[p.layout.t_r(k)];
            assert!(df.abs() <= rate + 1e-9);
            assert!(dr.abs() <= rate + 1e-9);
        }
    }

    #[test]
    fn dump_mentions_dimensions() {
        let p = build_toy(5);
        let s = p.dump();
        assert!(s.contains("variables: 48"));
        assert!(s.contains("PowerCoupling"));
    }
}
