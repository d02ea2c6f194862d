// quick debug binary
use ecodrive::nlp::NlpProblem;
use ecodrive::solver::{solve, SolverOptions};

struct DiskRosenbrock;
impl NlpProblem for DiskRosenbrock {
    fn num_vars(&self) -> usize { 2 }
    fn num_constraints(&self) -> usize { 1 }
    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) { (vec![f64::NEG_INFINITY; 2], vec![f64::INFINITY; 2]) }
    fn constraint_bounds(&self) -> (Vec<f64>, Vec<f64>) { (vec![f64::NEG_INFINITY], vec![1.0]) }
    fn objective(&self, x: &[f64]) -> f64 { (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2) }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        g[1] = 200.0 * (x[1] - x[0] * x[0]);
    }
    fn constraints(&self, x: &[f64], c: &mut [f64]) { c[0] = x[0] * x[0] + x[1] * x[1]; }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> { vec![(0, 0), (0, 1)] }
    fn jacobian_values(&self, x: &[f64], v: &mut [f64]) { v[0] = 2.0 * x[0]; v[1] = 2.0 * x[1]; }
    fn hessian_structure(&self) -> Vec<(usize, usize)> { vec![(0, 0), (1, 0), (1, 1)] }
    fn hessian_values(&self, x: &[f64], sigma: f64, y: &[f64], v: &mut [f64]) {
        v[0] = sigma * (2.0 - 400.0 * (x[1] - 3.0 * x[0] * x[0])) + 2.0 * y[0];
        v[1] = sigma * (-400.0 * x[0]);
        v[2] = sigma * 200.0 + 2.0 * y[0];
    }
}

fn main() {
    let opts = SolverOptions { collect_trace: true, ..Default::default() };
    let sol = solve(&DiskRosenbrock, &[5.0, -7.0], &opts).unwrap();
    println!("status {:?} iters {} kkt {:.3e} viol {:.3e} x {:?}", sol.status, sol.iterations, sol.kkt_residual, sol.constraint_violation, sol.x);
    for r in sol.trace.iter() {
        println!("it {:3} mu {:.1e} nu {:.1e} f {:.4e} th {:.3e} a {:.2e} dw {:.1e} m {:.4e}->{:.4e}", r.iter, r.mu, r.nu, r.objective, r.infeasibility, r.alpha, r.delta_w, r.merit_before, r.merit_after);
    }
}
