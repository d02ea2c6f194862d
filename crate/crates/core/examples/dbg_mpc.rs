use ecodrive::model::{State, VehicleModel};
use ecodrive::mpc::*;
use ecodrive::scenario::{GradeProfile, Sample, Scenario};

fn main() {
    let n = 300;
    let samples: Vec<Sample> = (0..=n)
        .map(|k| Sample { t: k as f64 * 0.1, d_p: 80.0, v_p: 0.0, a_p: 0.0 })
        .collect();
    let sc = Scenario { samples, dt: 0.1, intersections: vec![], grade: GradeProfile::flat(), v_max: 20.0 };
    let m = VehicleModel::default_model().unwrap();
    let cfg = MpcConfig { initial_gap_m: 80.0, seed: 1, ..MpcConfig::default() };

    // Re-implement the first cycles manually to see what the solver does.
    use ecodrive::ocp::*;
    use ecodrive::prediction::predict_preceding;
    use ecodrive::solver::{solve, SolverOptions};
    use std::sync::Arc;
    let mut state = State { d: 0.0, v: 0.0, soc: 0.8 };
    let mut prev: Option<PrevPlan> = None;
    let mut prev_torque = None;
    for cycle in 0..6 {
        let t0 = cycle as f64;
        let pred = predict_preceding(&sc, t0, 150, 0.1).unwrap();
        let inputs = OcpInputs {
            t0, x0: state, prev_torque, prediction: pred,
            signals: vec![], grade_by_step: vec![0.0; 150],
        };
        let p = build_ocp(inputs, OcpConfig::default(), Arc::clone(&m)).unwrap();
        let z0 = warm_start(&p, prev.as_ref());
        let mut opts = SolverOptions::default();
        if prev.is_some() { opts.mu_init = 1e-3; }
        let sol = solve(&p, &z0, &opts).unwrap();
        let nan = sol.x.iter().filter(|v| !v.is_finite()).count();
        println!(
            "cycle {cycle}: status {:?} iters {} kkt {:.2e} viol {:.2e} obj {:.4e} nan_in_x {}",
            sol.status, sol.iterations, sol.kkt_residual, sol.constraint_violation, sol.objective, nan
        );
        let l = p.layout;
        // apply 10 steps
        let mut s = state;
        for j in 0..10 {
            let c = ecodrive::model::Control { t_f: sol.x[l.t_f(j)], t_r: sol.x[l.t_r(j)], f_b: sol.x[l.f_b(j)] };
            let (next, _, _) = plant_step(&s, &c, 0.0, &m, 0.1).unwrap();
            s = next;
        }
        println!("  applied: d {:.3} v {:.4} soc {:.8}", s.d, s.v, s.soc);
        state = s;
        prev_torque = Some((sol.x[l.t_f(9)], sol.x[l.t_r(9)]));
        prev = Some(PrevPlan { z: sol.x, shift_steps: 10 });
        let _ = &cfg;
    }
}
