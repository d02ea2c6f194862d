use ecodrive::config::RunConfig;
use ecodrive::scenario::generate_corridor_scenario;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.mpc.seed = 8;
    let sc = generate_corridor_scenario(8, &cfg.corridor);
    let model = cfg.build_model().unwrap();
    match ecodrive::mpc::run_closed_loop(&sc, &cfg.mpc, &model) {
        Ok(log) => println!("ok, final soc {}", log.final_soc()),
        Err(e) => println!("failed: {e}"),
    }
    // Re-run manually printing cycle summaries up to the failure.
    use ecodrive::model::State;
    use ecodrive::ocp::*;
    use ecodrive::prediction::predict_preceding;
    use ecodrive::solver::{solve, SolverOptions};
    use std::sync::Arc;
    let mut state = State { d: sc.samples[0].d_p - 40.0, v: sc.samples[0].v_p, soc: 0.8 };
    let mut prev: Option<PrevPlan> = None;
    let mut prev_torque = None;
    let n = 150;
    for cycle in 0..70 {
        let t0 = cycle as f64;
        let pred = predict_preceding(&sc, t0, n, 0.1).unwrap();
        let dirs = signal_directives(&sc.intersections, t0, &state, n, 0.1, &model.vehicle, 20.0);
        let inputs = OcpInputs {
            t0, x0: state, prev_torque, prediction: pred.clone(),
            signals: dirs.clone(), grade_by_step: vec![0.0; n],
        };
        let p = build_ocp(inputs, cfg.mpc.ocp_config(), Arc::clone(&model)).unwrap_or_else(|e| panic!("cycle {cycle}: {e}"));
        let z0 = warm_start(&p, prev.as_ref());
        let mut opts = SolverOptions::default();
        if prev.is_some() { opts.mu_init = 1e-3; }
        let sol = solve(&p, &z0, &opts).unwrap();
        let l = p.layout;
        let mut s = state;
        for j in 0..10 {
            let c = ecodrive::model::Control { t_f: sol.x[l.t_f(j)], t_r: sol.x[l.t_r(j)], f_b: sol.x[l.f_b(j)] };
            let (next, _, _) = ecodrive::mpc::plant_step(&s, &c, 0.0, &model, 0.1).unwrap();
            s = next;
        }
        let k_now = sc.index_at(t0).unwrap();
        let gap = sc.samples[k_now].d_p - state.d;
        let max_s2 = (0..n).fold(0.0f64, |m, k| m.max(sol.x[l.s2(k)]));
        if cycle >= 50 || cycle % 10 == 0 {
            println!("cy {cycle:3} {:?} it {:3} viol {:.1e} | d {:7.1} v {:5.2} gap {:6.2} vp {:5.2} | s2max {:5.2} {:?}",
                sol.status, sol.iterations, sol.constraint_violation, state.d, state.v, gap, sc.samples[k_now].v_p, max_s2,
                dirs.iter().map(|d| (d.d_sig as i64, d.mode)).collect::<Vec<_>>());
        }
        state = s;
        prev_torque = Some((sol.x[l.t_f(9)], sol.x[l.t_r(9)]));
        prev = Some(PrevPlan { z: sol.x, shift_steps: 10 });
        if gap < 0.5 { println!("gap critical at cycle {cycle}"); break; }
    }
}
