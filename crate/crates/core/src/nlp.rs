//! Sparse nonlinear-program interface shared by the transcribed control
//! problem, the solver and the test problems.
//!
//! The canonical form is
//!
//! ```text
//! min  f(x)
//! s.t. c_lo <= c(x) <= c_up      (rows with c_lo == c_up are equalities)
//!      x_lo <=  x   <= x_up
//! ```
//!
//! Derivatives are exchanged as coordinate triplets with a fixed structure;
//! the Hessian is the lower triangle of `sigma * f''(x) + sum_i y_i * c_i''(x)`.

use crate::{Error, Result};

pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_constraints(&self) -> usize;

    /// `(lower, upper)` variable bounds; infinities mark free directions.
    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn constraint_bounds(&self) -> (Vec<f64>, Vec<f64>);

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn constraints(&self, x: &[f64], c: &mut [f64]);

    /// Fixed Jacobian sparsity as `(row, col)` pairs.
    fn jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]);

    /// Fixed lower-triangle Hessian sparsity as `(row, col)` pairs, row >= col.
    fn hessian_structure(&self) -> Vec<(usize, usize)>;
    /// Values of `sigma * hess(f) + sum_i y_i * hess(c_i)`.
    fn hessian_values(&self, x: &[f64], sigma: f64, y: &[f64], vals: &mut [f64]);

    /// Per-variable magnitudes used for internal scaling (1.0 = unscaled).
    fn var_scaling(&self) -> Vec<f64> {
        vec![1.0; self.num_vars()]
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_vars() {
            return Err(Error::DimensionMismatch {
                expected: self.num_vars(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Lagrange multipliers attached to a solution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Multipliers {
    /// One per constraint row.
    pub constraints: Vec<f64>,
    /// Bound duals, one per variable, both nonnegative.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Max-norm first-order optimality measure at `(x, multipliers)`:
/// stationarity, primal feasibility and complementarity.
pub fn kkt_residual(problem: &dyn NlpProblem, x: &[f64], m: &Multipliers) -> f64 {
    let n = problem.num_vars();
    let ncon = problem.num_constraints();
    let (x_lo, x_up) = problem.var_bounds();
    let (c_lo, c_up) = problem.constraint_bounds();

    let mut grad = vec![0.0; n];
    problem.gradient(x, &mut grad);
    let mut c = vec![0.0; ncon];
    problem.constraints(x, &mut c);
    let structure = problem.jacobian_structure();
    let mut jvals = vec![0.0; structure.len()];
    problem.jacobian_values(x, &mut jvals);

    // Stationarity: grad f - J^T y - z_lo + z_up.
    let mut stat = grad;
    for (&(r, col), &v) in structure.iter().zip(&jvals) {
        stat[col] -= v * m.constraints[r];
    }
    for i in 0..n {
        stat[i] -= m.lower[i];
        stat[i] += m.upper[i];
    }
    let stationarity = stat.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    // Primal feasibility for rows and bounds.
    let mut feas = 0.0f64;
    for i in 0..ncon {
        feas = feas.max(c_lo[i] - c[i]).max(c[i] - c_up[i]);
    }
    for i in 0..n {
        feas = feas.max(x_lo[i] - x[i]).max(x[i] - x_up[i]);
    }

    // Complementarity of bound and row duals.
    let mut compl = 0.0f64;
    for i in 0..n {
        if x_lo[i].is_finite() {
            compl = compl.max((m.lower[i] * (x[i] - x_lo[i])).abs());
        }
        if x_up[i].is_finite() {
            compl = compl.max((m.upper[i] * (x_up[i] - x[i])).abs());
        }
    }
    for i in 0..ncon {
        // Equality rows carry free-sign multipliers; skip them.
        if c_up[i] - c_lo[i] < 1e-14 {
            continue;
        }
        let slack = (c[i] - c_lo[i]).min(c_up[i] - c[i]);
        compl = compl.max((m.constraints[i] * slack).abs());
    }

    stationarity.max(feas.max(0.0)).max(compl)
}
