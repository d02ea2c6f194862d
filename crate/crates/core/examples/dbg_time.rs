use ecodrive::model::{State, VehicleModel};
use ecodrive::ocp::*;
use ecodrive::prediction::PrecedingPrediction;
use ecodrive::solver::{solve, SolverOptions};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let n = 150;
    let pred = PrecedingPrediction {
        t0: 0.0, dt: 0.1,
        d: (0..=n).map(|k| 80.0 + 0.0 * k as f64).collect(),
        v: vec![0.0; n + 1], a: vec![0.0; n + 1],
    };
    let m = VehicleModel::default_model().unwrap();
    let inputs = OcpInputs {
        t0: 0.0, x0: State { d: 0.0, v: 0.0, soc: 0.8 },
        prev_torque: None, prediction: pred, signals: vec![], grade_by_step: vec![0.0; n],
    };
    let p = build_ocp(inputs, OcpConfig::default(), Arc::clone(&m)).unwrap();
    let z0 = warm_start(&p, None);
    let t = Instant::now();
    let sol = solve(&p, &z0, &SolverOptions::default()).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!("status {:?} iters {} wall {:.3}s  ({:.2} ms/iter)", sol.status, sol.iterations, dt, 1000.0 * dt / sol.iterations.max(1) as f64);
    // rebuild cost
    let t2 = Instant::now();
    for _ in 0..10 {
        let inputs = p.inputs.clone();
        let _p2 = build_ocp(inputs, OcpConfig::default(), Arc::clone(&m)).unwrap();
    }
    println!("build_ocp: {:.2} ms", t2.elapsed().as_secs_f64() * 100.0);
}
