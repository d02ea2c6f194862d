use ecodrive::model::{State, VehicleModel};
use ecodrive::ocp::*;
use ecodrive::prediction::PrecedingPrediction;
use ecodrive::solver::{solve, SolverOptions};
use std::sync::Arc;

fn main() {
    let n = 150;
    let pred = PrecedingPrediction {
        t0: 0.0,
        dt: 0.1,
        d: vec![80.0; n + 1],
        v: vec![0.0; n + 1],
        a: vec![0.0; n + 1],
    };
    let m = VehicleModel::default_model().unwrap();
    let inputs = OcpInputs {
        t0: 0.0,
        x0: State { d: 0.0, v: 0.0, soc: 0.8 },
        prev_torque: None,
        prediction: pred,
        signals: vec![],
        grade_by_step: vec![0.0; n],
    };
    let p = build_ocp(inputs, OcpConfig::default(), Arc::clone(&m)).unwrap();
    let z0 = warm_start(&p, None);
    let opts = SolverOptions { collect_trace: true, ..Default::default() };
    let sol = solve(&p, &z0, &opts).unwrap();
    println!("status {:?} iters {} kkt {:.3e} viol {:.3e}", sol.status, sol.iterations, sol.kkt_residual, sol.constraint_violation);
    for r in sol.trace.iter().take(60) {
        println!("it {:3} mu {:.1e} nu {:.1e} f {:.6e} th {:.2e} a {:.2e} dw {:.1e} dm {:+.3e}", r.iter, r.mu, r.nu, r.objective, r.infeasibility, r.alpha, r.delta_w, r.merit_after - r.merit_before);
    }
}
// timing appendix in separate run below
