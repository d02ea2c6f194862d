//! Motor efficiency maps, their polynomial power approximation, torque
//! envelopes and battery-side traction power.
//!
//! Published motor map data is not available, so maps are synthesized from a
//! parametric loss model
//!
//! ```text
//! P_loss(w, T) = c0 + c1*|w| + c2*w^2 + c3*T^2 + c4*|w*T|
//! p_elec(w, T) = w*T + P_loss(w, T)
//! ```
//!
//! which reproduces the qualitative behaviour the optimizer exploits: the
//! rear PMSM is the more efficient machine between 100 and 500 rad/s while
//! the front induction motor offers the larger stall torque.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::vehicle::VehicleParams;
use crate::{Error, Result};

/// Mechanical power below which efficiency is left undefined (W).
pub const EFFICIENCY_POWER_FLOOR: f64 = 1e-9;

/// Map grid resolution (rad/s, N*m).
pub const OMEGA_GRID_STEP: f64 = 10.0;
pub const TORQUE_GRID_STEP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotorKind {
    /// Induction motor.
    Im,
    /// Permanent-magnet synchronous motor.
    Pmsm,
}

/// Coefficients of the synthetic loss model (W, W*s/rad, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoeffs {
    pub constant: f64,
    pub omega: f64,
    pub omega2: f64,
    pub torque2: f64,
    pub cross: f64,
}

impl LossCoeffs {
    pub fn power_loss(&self, omega: f64, torque: f64) -> f64 {
        self.constant
            + self.omega * omega.abs()
            + self.omega2 * omega * omega
            + self.torque2 * torque * torque
            + self.cross * (omega * torque).abs()
    }
}

/// Motor envelope and loss parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorSpec {
    pub kind: MotorKind,
    /// Constant-torque plateau (N*m).
    pub t_stall: f64,
    /// Constant-power region limit (W).
    pub p_rated: f64,
    /// Maximum shaft speed (rad/s).
    pub omega_max: f64,
    pub loss: LossCoeffs,
}

impl MotorSpec {
    /// Default front machine: induction motor, larger stall torque.
    pub fn default_im() -> Self {
        Self {
            kind: MotorKind::Im,
            t_stall: 220.0,
            p_rated: 125_000.0,
            omega_max: 1400.0,
            loss: LossCoeffs {
                constant: 350.0,
                omega: 2.5,
                omega2: 8.0e-4,
                torque2: 0.22,
                cross: 0.035,
            },
        }
    }

    /// Default rear machine: PMSM, more efficient at low/mid speed.
    pub fn default_pmsm() -> Self {
        Self {
            kind: MotorKind::Pmsm,
            t_stall: 180.0,
            p_rated: 110_000.0,
            omega_max: 1400.0,
            loss: LossCoeffs {
                constant: 180.0,
                omega: 1.0,
                omega2: 4.2e-3,
                torque2: 0.03,
                cross: 0.008,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_stall > 0.0 && self.p_rated > 0.0 && self.omega_max > 0.0) {
            return Err(Error::InvalidMotorSpec(
                "t_stall, p_rated and omega_max must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Speed-dependent torque limit `min(T_stall, P_rated/omega)`, symmetric for
/// regeneration.
pub fn max_torque_envelope(spec: &MotorSpec, omega: f64) -> Result<f64> {
    if !(0.0..=spec.omega_max).contains(&omega) {
        return Err(Error::OutOfDomain {
            omega,
            torque: 0.0,
            context: format!("envelope [0, {}]", spec.omega_max),
        });
    }
    Ok(spec.t_stall.min(spec.p_rated / omega.max(1e-6)))
}

/// Piecewise efficiency from mechanical power `w*T` and battery-side power.
///
/// Returns `None` where no efficiency is defined: zero mechanical power, or
/// loss-dominated weak regeneration where the ratio leaves (0, 1).
pub fn eta_from_power(omega: f64, torque: f64, p_elec: f64) -> Option<f64> {
    let p_mech = omega * torque;
    if p_mech.abs() < EFFICIENCY_POWER_FLOOR {
        return None;
    }
    let eta = if p_mech > 0.0 {
        p_mech / p_elec
    } else {
        p_elec / p_mech
    };
    (eta > 0.0 && eta < 1.0).then_some(eta)
}

/// Gridded efficiency map; `eta` is NaN where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyMap {
    pub omega_grid: Vec<f64>,
    pub torque_grid: Vec<f64>,
    /// Row-major `[omega][torque]`, battery-side power (W).
    pub p_elec: Vec<f64>,
    /// Row-major `[omega][torque]`, efficiency in (0,1) or NaN.
    pub eta: Vec<f64>,
}

impl EfficiencyMap {
    pub fn index(&self, i_omega: usize, i_torque: usize) -> usize {
        i_omega * self.torque_grid.len() + i_torque
    }

    pub fn omega_range(&self) -> (f64, f64) {
        (self.omega_grid[0], *self.omega_grid.last().unwrap())
    }

    pub fn torque_range(&self) -> (f64, f64) {
        (self.torque_grid[0], *self.torque_grid.last().unwrap())
    }

    fn locate(grid: &[f64], x: f64) -> Option<(usize, f64)> {
        let (lo, hi) = (grid[0], *grid.last().unwrap());
        if x < lo || x > hi {
            return None;
        }
        let i = match grid.binary_search_by(|g| g.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(grid.len() - 2),
            Err(i) => i.saturating_sub(1).min(grid.len() - 2),
        };
        let w = (x - grid[i]) / (grid[i + 1] - grid[i]);
        Some((i, w))
    }

    /// Bilinear interpolation of battery-side power.
    pub fn power_at(&self, omega: f64, torque: f64) -> Result<f64> {
        let (io, wo) = Self::locate(&self.omega_grid, omega).ok_or_else(|| Error::OutOfDomain {
            omega,
            torque,
            context: "efficiency map".into(),
        })?;
        let (it, wt) = Self::locate(&self.torque_grid, torque).ok_or_else(|| Error::OutOfDomain {
            omega,
            torque,
            context: "efficiency map".into(),
        })?;
        let p00 = self.p_elec[self.index(io, it)];
        let p01 = self.p_elec[self.index(io, it + 1)];
        let p10 = self.p_elec[self.index(io + 1, it)];
        let p11 = self.p_elec[self.index(io + 1, it + 1)];
        Ok(p00 * (1.0 - wo) * (1.0 - wt)
            + p01 * (1.0 - wo) * wt
            + p10 * wo * (1.0 - wt)
            + p11 * wo * wt)
    }

    /// Efficiency at an interior point; `Ok(None)` where undefined.
    pub fn efficiency_at(&self, omega: f64, torque: f64) -> Result<Option<f64>> {
        let p = self.power_at(omega, torque)?;
        Ok(eta_from_power(omega, torque, p))
    }

    /// Writes `omega,torque,p_elec,eta` rows; undefined efficiencies are blank.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "omega,torque,p_elec,eta")?;
        for (i, &omega) in self.omega_grid.iter().enumerate() {
            for (j, &torque) in self.torque_grid.iter().enumerate() {
                let idx = self.index(i, j);
                let eta = self.eta[idx];
                if eta.is_nan() {
                    writeln!(out, "{omega},{torque},{},", self.p_elec[idx])?;
                } else {
                    writeln!(out, "{omega},{torque},{},{eta}", self.p_elec[idx])?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::CsvParse {
                path: display.clone(),
                row: 0,
                message: e.to_string(),
            })?;
        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::CsvParse {
                path: display.clone(),
                row: i + 2,
                message: e.to_string(),
            })?;
            let field = |k: usize| -> Result<f64> {
                let raw = rec.get(k).unwrap_or("");
                if k == 3 && raw.is_empty() {
                    return Ok(f64::NAN);
                }
                raw.parse().map_err(|_| Error::CsvParse {
                    path: display.clone(),
                    row: i + 2,
                    message: format!("bad number {raw:?} in column {k}"),
                })
            };
            rows.push((field(0)?, field(1)?, field(2)?, field(3)?));
        }
        let mut omega_grid: Vec<f64> = Vec::new();
        let mut torque_grid: Vec<f64> = Vec::new();
        for &(o, t, _, _) in &rows {
            if omega_grid.last() != Some(&o) && !omega_grid.contains(&o) {
                omega_grid.push(o);
            }
            if !torque_grid.contains(&t) {
                torque_grid.push(t);
            }
        }
        if omega_grid.len() * torque_grid.len() != rows.len() {
            return Err(Error::CsvParse {
                path: display,
                row: rows.len() + 1,
                message: "rows do not form a complete grid".into(),
            });
        }
        let mut p_elec = vec![0.0; rows.len()];
        let mut eta = vec![f64::NAN; rows.len()];
        let nt = torque_grid.len();
        for (k, &(_, _, p, e)) in rows.iter().enumerate() {
            let (i, j) = (k / nt, k % nt);
            p_elec[i * nt + j] = p;
            eta[i * nt + j] = e;
        }
        Ok(Self {
            omega_grid,
            torque_grid,
            p_elec,
            eta,
        })
    }
}

/// Deterministic map synthesis from the loss model over the standard grid.
///
/// Rejects specs whose loss model fails to keep efficiency below one anywhere
/// on the envelope-feasible part of the grid.
pub fn generate_motor_map(spec: &MotorSpec) -> Result<EfficiencyMap> {
    spec.validate()?;
    let n_omega = (spec.omega_max / OMEGA_GRID_STEP).round() as usize + 1;
    let n_torque = 2 * (spec.t_stall / TORQUE_GRID_STEP).round() as usize + 1;
    let omega_grid: Vec<f64> = (0..n_omega).map(|i| i as f64 * OMEGA_GRID_STEP).collect();
    let torque_grid: Vec<f64> = (0..n_torque)
        .map(|j| -spec.t_stall + j as f64 * TORQUE_GRID_STEP)
        .collect();

    let mut p_elec = Vec::with_capacity(n_omega * n_torque);
    let mut eta = Vec::with_capacity(n_omega * n_torque);
    for &omega in &omega_grid {
        let t_env = max_torque_envelope(spec, omega)?;
        for &torque in &torque_grid {
            let loss = spec.loss.power_loss(omega, torque);
            let p = omega * torque + loss;
            // Efficiency below one is equivalent to positive losses.
            if torque.abs() <= t_env && loss <= 0.0 {
                return Err(Error::InvalidMotorSpec(format!(
                    "nonpositive loss {loss:.3} W at ({omega:.0} rad/s, {torque:.0} N*m)"
                )));
            }
            p_elec.push(p);
            eta.push(eta_from_power(omega, torque, p).unwrap_or(f64::NAN));
        }
    }
    Ok(EfficiencyMap {
        omega_grid,
        torque_grid,
        p_elec,
        eta,
    })
}

/// Bivariate polynomial model of battery-side power in (omega, torque).
///
/// Fitted and evaluated in coordinates scaled to [-1, 1] for conditioning;
/// `coeffs` follows [`poly_terms`] ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPolynomial {
    pub degree: u32,
    pub coeffs: Vec<f64>,
    pub omega_range: (f64, f64),
    pub torque_range: (f64, f64),
    /// Root-mean-square residual of the fit (W).
    pub rmse: f64,
}

/// Exponent pairs `(i, j)` with `i + j <= degree`, ordered by total degree.
pub fn poly_terms(degree: u32) -> Vec<(u32, u32)> {
    let mut terms = Vec::new();
    for d in 0..=degree {
        for i in 0..=d {
            terms.push((i, d - i));
        }
    }
    terms
}

impl PowerPolynomial {
    pub const DEGREE: u32 = 5;

    fn scale(&self, omega: f64, torque: f64) -> (f64, f64, f64, f64) {
        let (olo, ohi) = self.omega_range;
        let (tlo, thi) = self.torque_range;
        let so = 2.0 / (ohi - olo);
        let st = 2.0 / (thi - tlo);
        ((omega - olo) * so - 1.0, (torque - tlo) * st - 1.0, so, st)
    }

    pub fn domain_contains(&self, omega: f64, torque: f64) -> bool {
        let (olo, ohi) = self.omega_range;
        let (tlo, thi) = self.torque_range;
        (olo..=ohi).contains(&omega) && (tlo..=thi).contains(&torque)
    }

    /// Battery-side power (W).
    pub fn eval(&self, omega: f64, torque: f64) -> f64 {
        let (x, y, _, _) = self.scale(omega, torque);
        let (xp, yp) = power_tables(x, y, self.degree);
        poly_terms(self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(&(i, j), &c)| c * xp[i as usize] * yp[j as usize])
            .sum()
    }

    /// Value and first partials (dP/domega, dP/dtorque).
    pub fn eval_with_grad(&self, omega: f64, torque: f64) -> (f64, f64, f64) {
        let (x, y, so, st) = self.scale(omega, torque);
        let (xp, yp) = power_tables(x, y, self.degree);
        let (mut p, mut px, mut py) = (0.0, 0.0, 0.0);
        for (&(i, j), &c) in poly_terms(self.degree).iter().zip(&self.coeffs) {
            let (i, j) = (i as usize, j as usize);
            p += c * xp[i] * yp[j];
            if i > 0 {
                px += c * i as f64 * xp[i - 1] * yp[j];
            }
            if j > 0 {
                py += c * j as f64 * xp[i] * yp[j - 1];
            }
        }
        (p, px * so, py * st)
    }

    /// Second partials (d2/domega2, d2/domega dtorque, d2/dtorque2).
    pub fn second_partials(&self, omega: f64, torque: f64) -> (f64, f64, f64) {
        let (x, y, so, st) = self.scale(omega, torque);
        let (xp, yp) = power_tables(x, y, self.degree);
        let (mut pxx, mut pxy, mut pyy) = (0.0, 0.0, 0.0);
        for (&(i, j), &c) in poly_terms(self.degree).iter().zip(&self.coeffs) {
            let (i, j) = (i as usize, j as usize);
            if i > 1 {
                pxx += c * (i * (i - 1)) as f64 * xp[i - 2] * yp[j];
            }
            if i > 0 && j > 0 {
                pxy += c * (i * j) as f64 * xp[i - 1] * yp[j - 1];
            }
            if j > 1 {
                pyy += c * (j * (j - 1)) as f64 * xp[i] * yp[j - 2];
            }
        }
        (pxx * so * so, pxy * so * st, pyy * st * st)
    }
}

fn power_tables(x: f64, y: f64, degree: u32) -> (Vec<f64>, Vec<f64>) {
    let n = degree as usize + 1;
    let mut xp = vec![1.0; n];
    let mut yp = vec![1.0; n];
    for k in 1..n {
        xp[k] = xp[k - 1] * x;
        yp[k] = yp[k - 1] * y;
    }
    (xp, yp)
}

/// Least-squares fit of the map's battery-side power with a total-degree-5
/// bivariate polynomial covering both propelling and regeneration.
pub fn fit_power_polynomial(map: &EfficiencyMap) -> Result<PowerPolynomial> {
    let (tlo, thi) = map.torque_range();
    if !(tlo < 0.0 && thi > 0.0) {
        return Err(Error::FitFailed(
            "map must cover both torque signs".into(),
        ));
    }
    let degree = PowerPolynomial::DEGREE;
    let terms = poly_terms(degree);
    let n = terms.len();
    let m = map.p_elec.len();
    if m < n {
        return Err(Error::FitFailed(format!(
            "grid too small: {m} points for {n} coefficients"
        )));
    }

    let mut shell = PowerPolynomial {
        degree,
        coeffs: vec![0.0; n],
        omega_range: map.omega_range(),
        torque_range: map.torque_range(),
        rmse: 0.0,
    };

    // Column-major design matrix in scaled coordinates.
    let mut a = vec![0.0; m * n];
    let mut b = Vec::with_capacity(m);
    let mut row = 0;
    for (i, &omega) in map.omega_grid.iter().enumerate() {
        for (j, &torque) in map.torque_grid.iter().enumerate() {
            let (x, y, _, _) = shell.scale(omega, torque);
            let (xp, yp) = power_tables(x, y, degree);
            for (col, &(p, q)) in terms.iter().enumerate() {
                a[col * m + row] = xp[p as usize] * yp[q as usize];
            }
            b.push(map.p_elec[map.index(i, j)]);
            row += 1;
        }
    }

    let coeffs = householder_lstsq(&mut a, m, n, &mut b)?;
    shell.coeffs = coeffs;

    let mut ss = 0.0;
    for (i, &omega) in map.omega_grid.iter().enumerate() {
        for (j, &torque) in map.torque_grid.iter().enumerate() {
            let r = shell.eval(omega, torque) - map.p_elec[map.index(i, j)];
            ss += r * r;
        }
    }
    shell.rmse = (ss / m as f64).sqrt();
    Ok(shell)
}

/// Dense Householder-QR least squares, `a` column-major m-by-n, m >= n.
fn householder_lstsq(a: &mut [f64], m: usize, n: usize, b: &mut [f64]) -> Result<Vec<f64>> {
    let mut rdiag = vec![0.0; n];
    for k in 0..n {
        let col = &a[k * m..(k + 1) * m];
        let norm: f64 = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::FitFailed(format!(
                "rank-deficient design matrix at column {k}"
            )));
        }
        let alpha = if a[k * m + k] >= 0.0 { -norm } else { norm };
        // Householder vector stored in place of column k below the diagonal.
        a[k * m + k] -= alpha;
        let vnorm2: f64 = a[k * m + k..(k + 1) * m].iter().map(|v| v * v).sum();
        rdiag[k] = alpha;
        if vnorm2 > 0.0 {
            for j in k + 1..n {
                let dot: f64 = (k..m).map(|i| a[k * m + i] * a[j * m + i]).sum();
                let scale = 2.0 * dot / vnorm2;
                for i in k..m {
                    a[j * m + i] -= scale * a[k * m + i];
                }
            }
            let dot: f64 = (k..m).map(|i| a[k * m + i] * b[i]).sum();
            let scale = 2.0 * dot / vnorm2;
            for i in k..m {
                b[i] -= scale * a[k * m + i];
            }
        }
    }
    // Back substitution on R x = Q^T b.
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[j * m + k] * x[j];
        }
        x[k] = s / rdiag[k];
    }
    Ok(x)
}

/// Traction power demand: sum of both motors' polynomial battery-side power
/// at shaft speed `n*v`.
pub fn electrical_power(
    poly_f: &PowerPolynomial,
    poly_r: &PowerPolynomial,
    t_f: f64,
    t_r: f64,
    v: f64,
    p: &VehicleParams,
) -> Result<f64> {
    let omega = p.n * v;
    for (poly, t) in [(poly_f, t_f), (poly_r, t_r)] {
        if !poly.domain_contains(omega, t) {
            return Err(Error::OutOfDomain {
                omega,
                torque: t,
                context: "power polynomial".into(),
            });
        }
    }
    Ok(poly_f.eval(omega, t_f) + poly_r.eval(omega, t_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_maps() -> (EfficiencyMap, EfficiencyMap) {
        (
            generate_motor_map(&MotorSpec::default_im()).unwrap(),
            generate_motor_map(&MotorSpec::default_pmsm()).unwrap(),
        )
    }

    #[test]
    fn envelope_plateau_and_power_region() {
        let spec = MotorSpec {
            t_stall: 220.0,
            p_rated: 150_000.0,
            ..MotorSpec::default_im()
        };
        assert_eq!(max_torque_envelope(&spec, 0.0).unwrap(), 220.0);
        assert_relative_eq!(max_torque_envelope(&spec, 1000.0).unwrap(), 150.0);
        assert!(max_torque_envelope(&spec, 1401.0).is_err());
        assert!(max_torque_envelope(&spec, -1.0).is_err());
    }

    #[test]
    fn envelope_non_increasing() {
        let spec = MotorSpec::default_pmsm();
        let mut prev = f64::INFINITY;
        for i in 0..=140 {
            let t = max_torque_envelope(&spec, i as f64 * 10.0).unwrap();
            assert!(t <= prev + 1e-12);
            prev = t;
        }
    }

    #[test]
    fn eta_formula_examples() {
        assert_relative_eq!(
            eta_from_power(200.0, 100.0, 22222.0).unwrap(),
            0.9000,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            eta_from_power(200.0, -100.0, -18000.0).unwrap(),
            0.90,
            max_relative = 1e-12
        );
        assert_eq!(eta_from_power(200.0, 0.0, 500.0), None);
        assert_eq!(eta_from_power(0.0, 100.0, 500.0), None);
    }

    #[test]
    fn zero_torque_column_carries_only_losses() {
        let (im, _) = default_maps();
        let j0 = im
            .torque_grid
            .iter()
            .position(|&t| t == 0.0)
            .expect("zero torque on grid");
        for i in 0..im.omega_grid.len() {
            let idx = im.index(i, j0);
            assert!(im.eta[idx].is_nan());
            assert!(im.p_elec[idx] >= 0.0);
            assert_relative_eq!(
                im.p_elec[idx],
                MotorSpec::default_im().loss.power_loss(im.omega_grid[i], 0.0)
            );
        }
    }

    #[test]
    fn map_is_deterministic() {
        let a = generate_motor_map(&MotorSpec::default_im()).unwrap();
        let b = generate_motor_map(&MotorSpec::default_im()).unwrap();
        assert_eq!(a.p_elec, b.p_elec);
        let eta_bits = |m: &EfficiencyMap| -> Vec<u64> { m.eta.iter().map(|e| e.to_bits()).collect() };
        assert_eq!(eta_bits(&a), eta_bits(&b));
    }

    #[test]
    fn eta_below_one_and_regen_bounded_where_defined() {
        for map in [default_maps().0, default_maps().1] {
            for (i, &omega) in map.omega_grid.iter().enumerate() {
                for (j, &torque) in map.torque_grid.iter().enumerate() {
                    let idx = map.index(i, j);
                    let (p, eta) = (map.p_elec[idx], map.eta[idx]);
                    let p_mech = omega * torque;
                    if p_mech > 0.0 {
                        assert!(p >= p_mech, "propel p_elec {p} < mech {p_mech}");
                    }
                    if eta.is_nan() {
                        continue;
                    }
                    assert!(eta > 0.0 && eta < 1.0, "eta {eta} at ({omega},{torque})");
                    if p_mech < 0.0 {
                        assert!(p >= p_mech && p.abs() <= p_mech.abs());
                    }
                }
            }
        }
    }

    #[test]
    fn pmsm_dominates_im_in_mid_speed_band() {
        let (im, pmsm) = default_maps();
        let eta_at = |m: &EfficiencyMap, o: f64, t: f64| {
            let i = m.omega_grid.iter().position(|&g| g == o).unwrap();
            let j = m.torque_grid.iter().position(|&g| g == t).unwrap();
            m.eta[m.index(i, j)]
        };
        assert!(eta_at(&pmsm, 300.0, 100.0) > eta_at(&im, 300.0, 100.0));
        // T_max for the ordering window is the smaller stall torque.
        let t_hi = 0.8 * MotorSpec::default_pmsm().t_stall;
        let mut checked = 0;
        for o in (100..=500).step_by(10) {
            for t in (20..=t_hi as usize).step_by(5) {
                let (eo, et) = (o as f64, t as f64);
                assert!(
                    eta_at(&pmsm, eo, et) >= eta_at(&im, eo, et),
                    "ordering fails at ({eo}, {et})"
                );
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn im_has_larger_stall_torque() {
        assert!(MotorSpec::default_im().t_stall > MotorSpec::default_pmsm().t_stall);
    }

    #[test]
    fn self_fit_recovers_polynomial() {
        // Synthesize p_elec directly from a degree-<=5 polynomial.
        let truth = PowerPolynomial {
            degree: 5,
            coeffs: (0..21).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect(),
            omega_range: (0.0, 1400.0),
            torque_range: (-220.0, 220.0),
            rmse: 0.0,
        };
        let omega_grid: Vec<f64> = (0..=140).map(|i| i as f64 * 10.0).collect();
        let torque_grid: Vec<f64> = (0..=88).map(|j| -220.0 + j as f64 * 5.0).collect();
        let mut p_elec = Vec::new();
        for &o in &omega_grid {
            for &t in &torque_grid {
                p_elec.push(truth.eval(o, t));
            }
        }
        let eta = vec![f64::NAN; p_elec.len()];
        let map = EfficiencyMap {
            omega_grid,
            torque_grid,
            p_elec: p_elec.clone(),
            eta,
        };
        let fit = fit_power_polynomial(&map).unwrap();
        let peak = p_elec.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(fit.rmse <= 1e-8 * peak, "rmse {} peak {}", fit.rmse, peak);
        for (a, b) in fit.coeffs.iter().zip(&truth.coeffs) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn default_maps_fit_within_two_percent_of_peak() {
        for map in [default_maps().0, default_maps().1] {
            let fit = fit_power_polynomial(&map).unwrap();
            let peak = map.p_elec.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(
                fit.rmse <= 0.02 * peak,
                "rmse {} exceeds 2% of peak {}",
                fit.rmse,
                peak
            );
        }
    }

    #[test]
    fn fit_invariant_to_grid_point_ordering() {
        let (im, _) = default_maps();
        let fit = fit_power_polynomial(&im).unwrap();
        // Reverse both grid axes: same point set, different enumeration order.
        let nt = im.torque_grid.len();
        let no = im.omega_grid.len();
        let mut rev = EfficiencyMap {
            omega_grid: im.omega_grid.iter().rev().cloned().collect(),
            torque_grid: im.torque_grid.iter().rev().cloned().collect(),
            p_elec: vec![0.0; im.p_elec.len()],
            eta: vec![f64::NAN; im.eta.len()],
        };
        for i in 0..no {
            for j in 0..nt {
                rev.p_elec[(no - 1 - i) * nt + (nt - 1 - j)] = im.p_elec[i * nt + j];
            }
        }
        // Grids must ascend for interpolation; restore order but keep data.
        rev.omega_grid.reverse();
        rev.torque_grid.reverse();
        let mut p2 = vec![0.0; rev.p_elec.len()];
        for i in 0..no {
            for j in 0..nt {
                p2[i * nt + j] = rev.p_elec[(no - 1 - i) * nt + (nt - 1 - j)];
            }
        }
        rev.p_elec = p2;
        let fit2 = fit_power_polynomial(&rev).unwrap();
        for (a, b) in fit.coeffs.iter().zip(&fit2.coeffs) {
            assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn polynomial_matches_map_interpolation_within_rmse_band() {
        let (im, _) = default_maps();
        let fit = fit_power_polynomial(&im).unwrap();
        let peak = im.p_elec.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let o = rng.gen_range(0.0..1400.0);
            let t = rng.gen_range(-220.0..220.0);
            let diff = (fit.eval(o, t) - im.power_at(o, t).unwrap()).abs();
            worst = worst.max(diff);
        }
        // Interpolation and fit should agree within a few RMSE; scaled to peak.
        assert!(
            worst <= 8.0 * fit.rmse.max(1e-6) + 1e-3 * peak,
            "worst deviation {worst}"
        );
    }

    #[test]
    fn electrical_power_signs() {
        let (im, pmsm) = default_maps();
        let pf = fit_power_polynomial(&im).unwrap();
        let pr = fit_power_polynomial(&pmsm).unwrap();
        let p = VehicleParams::default();
        let idle = electrical_power(&pf, &pr, 0.0, 0.0, 0.0, &p).unwrap();
        assert!(idle >= 0.0, "idle losses should be nonnegative, got {idle}");
        let regen = electrical_power(&pf, &pr, -80.0, -80.0, 15.0, &p).unwrap();
        assert!(regen < 0.0, "deep regeneration should charge, got {regen}");
        assert!(electrical_power(&pf, &pr, 500.0, 0.0, 0.0, &p).is_err());
    }

    #[test]
    fn polynomial_gradients_match_finite_differences() {
        let (im, _) = default_maps();
        let fit = fit_power_polynomial(&im).unwrap();
        let h = 1e-4;
        for &(o, t) in &[(120.0, 30.0), (700.0, -90.0), (1300.0, 5.0)] {
            let (_, po, pt) = fit.eval_with_grad(o, t);
            let fd_o = (fit.eval(o + h, t) - fit.eval(o - h, t)) / (2.0 * h);
            let fd_t = (fit.eval(o, t + h) - fit.eval(o, t - h)) / (2.0 * h);
            assert_relative_eq!(po, fd_o, max_relative = 1e-5, epsilon = 1e-5);
            assert_relative_eq!(pt, fd_t, max_relative = 1e-5, epsilon = 1e-5);
            let (pxx, pxy, pyy) = fit.second_partials(o, t);
            let fd_xx = (fit.eval_with_grad(o + h, t).1 - fit.eval_with_grad(o - h, t).1) / (2.0 * h);
            let fd_xy = (fit.eval_with_grad(o, t + h).1 - fit.eval_with_grad(o, t - h).1) / (2.0 * h);
            let fd_yy = (fit.eval_with_grad(o, t + h).2 - fit.eval_with_grad(o, t - h).2) / (2.0 * h);
            assert_relative_eq!(pxx, fd_xx, max_relative = 1e-4, epsilon = 1e-4);
            assert_relative_eq!(pxy, fd_xy, max_relative = 1e-4, epsilon = 1e-4);
            assert_relative_eq!(pyy, fd_yy, max_relative = 1e-4, epsilon = 1e-4);
        }
    }

    #[test]
    fn map_csv_round_trip() {
        let (im, _) = default_maps();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        im.write_csv(&path).unwrap();
        let back = EfficiencyMap::read_csv(&path).unwrap();
        assert_eq!(back.omega_grid, im.omega_grid);
        assert_eq!(back.torque_grid, im.torque_grid);
        for (a, b) in back.p_elec.iter().zip(&im.p_elec) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        for (a, b) in back.eta.iter().zip(&im.eta) {
            assert!(a.is_nan() == b.is_nan());
            if !a.is_nan() {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_loss_spec() {
        let mut spec = MotorSpec::default_im();
        spec.loss.constant = -500.0;
        assert!(matches!(
            generate_motor_map(&spec),
            Err(Error::InvalidMotorSpec(_))
        ));
    }
}
