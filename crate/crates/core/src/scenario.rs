//! Corridor scenarios: preceding-vehicle trajectory, signal schedules and
//! grade profile, plus a deterministic synthetic corridor generator that
//! stands in for externally exported traffic data.
//!
//! File formats (all SI, uniform time step):
//!
//! - scenario CSV: `t,d_p,v_p,a_p`
//! - signals CSV:  `id,d_sig,cycle_s,green_start_s,green_end_s`
//! - grade CSV:    `pos_m,phi_rad`

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Position/speed consistency tolerance for forward-Euler sampled data (m).
pub const CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub d_p: f64,
    pub v_p: f64,
    pub a_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Green,
    Red,
}

/// Cyclic fixed-time signal program: green on `[green_start, green_end)`
/// within each cycle, red otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSchedule {
    pub cycle_s: f64,
    pub green_start_s: f64,
    pub green_end_s: f64,
}

impl SignalSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_s > 0.0
            && 0.0 <= self.green_start_s
            && self.green_start_s < self.green_end_s
            && self.green_end_s <= self.cycle_s)
        {
            return Err(Error::InvalidParameter(format!(
                "signal schedule must satisfy 0 <= green_start < green_end <= cycle, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn phase_at(&self, t: f64) -> Phase {
        let u = t.rem_euclid(self.cycle_s);
        if u >= self.green_start_s && u < self.green_end_s {
            Phase::Green
        } else {
            Phase::Red
        }
    }

    /// Start of the current green window if green at `t`, else of the next one.
    pub fn green_window(&self, t: f64) -> (f64, f64) {
        let base = t - t.rem_euclid(self.cycle_s);
        let u = t.rem_euclid(self.cycle_s);
        if u < self.green_end_s {
            (base + self.green_start_s, base + self.green_end_s)
        } else {
            (
                base + self.cycle_s + self.green_start_s,
                base + self.cycle_s + self.green_end_s,
            )
        }
    }

    /// First instant at or after `t` when the signal is (or turns) red.
    pub fn next_red_onset(&self, t: f64) -> f64 {
        match self.phase_at(t) {
            Phase::Red => t,
            Phase::Green => t - t.rem_euclid(self.cycle_s) + self.green_end_s,
        }
    }

    /// Contiguous phase intervals covering `[0, duration]`.
    pub fn intervals(&self, duration: f64) -> Vec<(f64, f64, Phase)> {
        let mut out = Vec::new();
        let mut t = 0.0;
        while t < duration {
            let base = t - t.rem_euclid(self.cycle_s);
            let u = t - base;
            let (end, phase) = if u < self.green_start_s {
                (base + self.green_start_s, Phase::Red)
            } else if u < self.green_end_s {
                (base + self.green_end_s, Phase::Green)
            } else {
                (base + self.cycle_s, Phase::Red)
            };
            let end = end.min(duration);
            out.push((t, end, phase));
            t = end;
        }
        // Merge adjacent equal phases (red wrapping across the cycle boundary).
        let mut merged: Vec<(f64, f64, Phase)> = Vec::new();
        for iv in out {
            match merged.last_mut() {
                Some(last) if last.2 == iv.2 && (last.1 - iv.0).abs() < 1e-12 => last.1 = iv.1,
                _ => merged.push(iv),
            }
        }
        merged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: u32,
    /// Stop-line position (m).
    pub d_sig: f64,
    pub schedule: SignalSchedule,
}

/// Piecewise-linear grade profile over position; empty means flat.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradeProfile {
    /// `(position m, grade rad)`, strictly increasing positions.
    pub points: Vec<(f64, f64)>,
}

impl GradeProfile {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn phi_at(&self, pos: f64) -> f64 {
        let pts = &self.points;
        if pts.is_empty() {
            return 0.0;
        }
        if pos <= pts[0].0 {
            return pts[0].1;
        }
        if pos >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let i = pts.partition_point(|&(p, _)| p <= pos) - 1;
        let (p0, g0) = pts[i];
        let (p1, g1) = pts[i + 1];
        g0 + (g1 - g0) * (pos - p0) / (p1 - p0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub samples: Vec<Sample>,
    pub dt: f64,
    pub intersections: Vec<Intersection>,
    pub grade: GradeProfile,
    pub v_max: f64,
}

impl Scenario {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t) - self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    /// Nearest sample index for time `t` (rounded to the grid).
    pub fn index_at(&self, t: f64) -> Result<usize> {
        let rel = (t - self.start_time()) / self.dt;
        let k = rel.round();
        if (rel - k).abs() > 1e-6 || k < 0.0 || k as usize >= self.samples.len() {
            return Err(Error::PredictionRange(format!(
                "t={t} not on the sample grid [{}, {}] step {}",
                self.start_time(),
                self.samples.last().map_or(0.0, |s| s.t),
                self.dt
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::ScenarioInvariant {
                row: 0,
                message: "need at least two samples".into(),
            });
        }
        for (k, w) in self.samples.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if b.t <= a.t || (b.t - a.t - self.dt).abs() > 1e-9 {
                return Err(Error::ScenarioInvariant {
                    row: k + 1,
                    message: format!(
                        "time must increase uniformly by {}: {} -> {}",
                        self.dt, a.t, b.t
                    ),
                });
            }
            if b.d_p < a.d_p {
                return Err(Error::ScenarioInvariant {
                    row: k + 1,
                    message: format!("position decreases: {} -> {}", a.d_p, b.d_p),
                });
            }
            if (b.d_p - a.d_p - a.v_p * self.dt).abs() > CONSISTENCY_TOL {
                return Err(Error::ScenarioInvariant {
                    row: k + 1,
                    message: format!(
                        "position/speed inconsistency: d step {} vs v*dt {}",
                        b.d_p - a.d_p,
                        a.v_p * self.dt
                    ),
                });
            }
        }
        for (k, s) in self.samples.iter().enumerate() {
            if s.v_p < 0.0 {
                return Err(Error::ScenarioInvariant {
                    row: k,
                    message: format!("negative speed {}", s.v_p),
                });
            }
        }
        for ix in &self.intersections {
            ix.schedule.validate()?;
        }
        Ok(())
    }

    pub fn save(
        &self,
        scenario_csv: &Path,
        signals_csv: Option<&Path>,
        grade_csv: Option<&Path>,
    ) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(scenario_csv)?);
        writeln!(out, "t,d_p,v_p,a_p")?;
        for s in &self.samples {
            writeln!(out, "{},{},{},{}", s.t, s.d_p, s.v_p, s.a_p)?;
        }
        drop(out);
        if let Some(path) = signals_csv {
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(out, "id,d_sig,cycle_s,green_start_s,green_end_s")?;
            for ix in &self.intersections {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    ix.id, ix.d_sig, ix.schedule.cycle_s, ix.schedule.green_start_s, ix.schedule.green_end_s
                )?;
            }
        }
        if let Some(path) = grade_csv {
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(out, "pos_m,phi_rad")?;
            for (p, g) in &self.grade.points {
                writeln!(out, "{p},{g}")?;
            }
        }
        Ok(())
    }
}

fn parse_f64(path: &str, row: usize, field: &str, raw: Option<&str>) -> Result<f64> {
    let raw = raw.ok_or_else(|| Error::CsvParse {
        path: path.to_string(),
        row,
        message: format!("missing column {field}"),
    })?;
    raw.trim().parse().map_err(|_| Error::CsvParse {
        path: path.to_string(),
        row,
        message: format!("column {field}: bad number {raw:?}"),
    })
}

/// Loads and validates a scenario from its CSV files.
pub fn load_scenario(
    scenario_csv: &Path,
    signals_csv: Option<&Path>,
    grade_csv: Option<&Path>,
    v_max: f64,
) -> Result<Scenario> {
    let display = scenario_csv.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(scenario_csv)
        .map_err(|e| Error::CsvParse {
            path: display.clone(),
            row: 0,
            message: e.to_string(),
        })?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // header is row 1
        let rec = rec.map_err(|e| Error::CsvParse {
            path: display.clone(),
            row,
            message: e.to_string(),
        })?;
        samples.push(Sample {
            t: parse_f64(&display, row, "t", rec.get(0))?,
            d_p: parse_f64(&display, row, "d_p", rec.get(1))?,
            v_p: parse_f64(&display, row, "v_p", rec.get(2))?,
            a_p: parse_f64(&display, row, "a_p", rec.get(3))?,
        });
    }
    if samples.len() < 2 {
        return Err(Error::CsvParse {
            path: display,
            row: samples.len() + 1,
            message: "need at least two samples".into(),
        });
    }
    let dt = samples[1].t - samples[0].t;

    let mut intersections = Vec::new();
    if let Some(path) = signals_csv {
        let sp = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::CsvParse {
                path: sp.clone(),
                row: 0,
                message: e.to_string(),
            })?;
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::CsvParse {
                path: sp.clone(),
                row,
                message: e.to_string(),
            })?;
            intersections.push(Intersection {
                id: parse_f64(&sp, row, "id", rec.get(0))? as u32,
                d_sig: parse_f64(&sp, row, "d_sig", rec.get(1))?,
                schedule: SignalSchedule {
                    cycle_s: parse_f64(&sp, row, "cycle_s", rec.get(2))?,
                    green_start_s: parse_f64(&sp, row, "green_start_s", rec.get(3))?,
                    green_end_s: parse_f64(&sp, row, "green_end_s", rec.get(4))?,
                },
            });
        }
    }

    let mut grade = GradeProfile::flat();
    if let Some(path) = grade_csv {
        let gp = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::CsvParse {
                path: gp.clone(),
                row: 0,
                message: e.to_string(),
            })?;
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::CsvParse {
                path: gp.clone(),
                row,
                message: e.to_string(),
            })?;
            grade.points.push((
                parse_f64(&gp, row, "pos_m", rec.get(0))?,
                parse_f64(&gp, row, "phi_rad", rec.get(1))?,
            ));
        }
    }

    let scenario = Scenario {
        samples,
        dt,
        intersections,
        grade,
        v_max,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Intelligent-driver-style parameters for the synthetic preceding vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    /// Desired free-flow speed (m/s).
    pub v_desired: f64,
    /// Comfortable acceleration (m/s^2).
    pub accel: f64,
    /// Comfortable deceleration (m/s^2, positive).
    pub decel: f64,
    /// Desired time headway to an obstacle (s).
    pub headway_s: f64,
    /// Standstill gap to the stop line (m).
    pub min_gap: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self {
            v_desired: 18.0,
            accel: 1.8,
            decel: 2.5,
            headway_s: 1.2,
            min_gap: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorConfig {
    pub n_intersections: usize,
    /// Position of the first stop line (m).
    pub first_intersection_m: f64,
    /// Distance between consecutive stop lines (m).
    pub spacing_m: f64,
    pub cycle_s: f64,
    pub green_fraction: f64,
    pub duration_s: f64,
    pub dt: f64,
    pub v_max: f64,
    pub driver: DriverParams,
    /// Initial preceding-vehicle position (m); the ego starts 40 m behind.
    pub start_position: f64,
    pub start_speed: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            n_intersections: 4,
            first_intersection_m: 320.0,
            spacing_m: 450.0,
            cycle_s: 50.0,
            green_fraction: 0.35,
            duration_s: 280.0,
            dt: 0.1,
            v_max: 20.0,
            driver: DriverParams::default(),
            start_position: 40.0,
            start_speed: 10.0,
        }
    }
}

/// Deterministic synthetic corridor: one preceding vehicle driven by a
/// car-following law through fixed-time signals whose offsets are drawn from
/// the seed. The vehicle stops on red and never exceeds `v_max`.
pub fn generate_corridor_scenario(seed: u64, cfg: &CorridorConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let green_len = cfg.green_fraction * cfg.cycle_s;
    let intersections: Vec<Intersection> = (0..cfg.n_intersections)
        .map(|i| {
            let green_start = rng.gen_range(0.0..(cfg.cycle_s - green_len).max(1e-9));
            Intersection {
                id: i as u32,
                d_sig: cfg.first_intersection_m + i as f64 * cfg.spacing_m,
                schedule: SignalSchedule {
                    cycle_s: cfg.cycle_s,
                    green_start_s: green_start,
                    green_end_s: green_start + green_len,
                },
            }
        })
        .collect();

    let v_desired = (cfg.driver.v_desired * rng.gen_range(0.9..1.1)).min(0.98 * cfg.v_max);
    let drv = DriverParams {
        v_desired,
        ..cfg.driver.clone()
    };

    let n_steps = (cfg.duration_s / cfg.dt).round() as usize;
    let mut samples = Vec::with_capacity(n_steps + 1);
    let (mut d, mut v) = (cfg.start_position, cfg.start_speed.min(v_desired));
    // Commitment latch per intersection: once braking for a line, keep braking
    // until the light is green and crossable.
    let mut committed = vec![false; intersections.len()];

    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        let a = idm_accel(t, d, v, &drv, &intersections, &mut committed, cfg.v_max);
        let d_next = d + v * cfg.dt;
        let v_next = (v + a * cfg.dt).clamp(0.0, cfg.v_max);
        let a_real = (v_next - v) / cfg.dt;
        samples.push(Sample {
            t,
            d_p: d,
            v_p: v,
            a_p: if k == n_steps { 0.0 } else { a_real },
        });
        d = d_next;
        v = v_next;
    }

    Scenario {
        samples,
        dt: cfg.dt,
        intersections,
        grade: GradeProfile::flat(),
        v_max: cfg.v_max,
    }
}

fn idm_accel(
    t: f64,
    d: f64,
    v: f64,
    drv: &DriverParams,
    intersections: &[Intersection],
    committed: &mut [bool],
    v_max: f64,
) -> f64 {
    let free = drv.accel * (1.0 - (v / drv.v_desired).powi(4));
    let mut a = free;

    for (i, ix) in intersections.iter().enumerate() {
        let stop_at = ix.d_sig - drv.min_gap;
        if d > ix.d_sig - 0.5 {
            committed[i] = false;
            continue;
        }
        let gap = (stop_at - d).max(0.01);
        let blocking = match ix.schedule.phase_at(t) {
            Phase::Red => true,
            Phase::Green => {
                // Too little green left to clear the line at current speed.
                let eta = gap / v.max(1.0);
                let remaining = ix.schedule.next_red_onset(t) - t;
                eta + 1.0 > remaining
            }
        };
        if blocking {
            committed[i] = true;
        } else if committed[i] {
            // Release only when crossable again.
            committed[i] = false;
        }
        if committed[i] {
            let s_star =
                drv.min_gap + (v * drv.headway_s + v * v / (2.0 * (drv.accel * drv.decel).sqrt())).max(0.0);
            let a_ix = drv.accel * (1.0 - (v / drv.v_desired).powi(4) - (s_star / gap).powi(2));
            a = a.min(a_ix);
        }
        // Only the nearest line ahead shapes the behaviour.
        break;
    }

    // Keep below the corridor limit and within plausible vehicle capability.
    if v + a * 0.1 > v_max {
        a = (v_max - v) / 0.1;
    }
    a.clamp(-6.0, 3.0)
}
