use ecodrive::model::{State, VehicleModel};
use ecodrive::nlp::NlpProblem;
use ecodrive::ocp::*;
use ecodrive::prediction::PrecedingPrediction;
use std::sync::Arc;

fn main() {
    let n = 4;
    let pred = PrecedingPrediction {
        t0: 0.0, dt: 0.1,
        d: vec![50.0; n + 1], v: vec![0.0; n + 1], a: vec![0.0; n + 1],
    };
    let m = VehicleModel::default_model().unwrap();
    let inputs = OcpInputs {
        t0: 0.0, x0: State { d: 0.0, v: 2.0, soc: 0.8 },
        prev_torque: None, prediction: pred, signals: vec![], grade_by_step: vec![0.0; n],
    };
    let cfg = OcpConfig { n_steps: n, ..OcpConfig::default() };
    let p = build_ocp(inputs, cfg, Arc::clone(&m)).unwrap();
    let nv = p.num_vars();
    let nr = p.num_constraints();
    let mut z = cold_start(&p);
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for v in z.iter_mut() { *v += rng.gen_range(-0.02..0.02); }
    let y: Vec<f64> = (0..nr).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let sigma = 0.7;

    // analytic
    let hs = p.hessian_structure();
    let mut hv = vec![0.0; hs.len()];
    p.hessian_values(&z, sigma, &y, &mut hv);
    let mut dense = vec![vec![0.0; nv]; nv];
    for (&(r, c), &v) in hs.iter().zip(&hv) {
        dense[r][c] += v;
        if r != c { dense[c][r] += v; }
    }

    // FD of grad(L) where L = sigma f + y'c
    let grad_l = |z: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; nv];
        p.gradient(z, &mut g);
        for gi in g.iter_mut() { *gi *= sigma; }
        let js = p.jacobian_structure();
        let mut jv = vec![0.0; js.len()];
        p.jacobian_values(z, &mut jv);
        for (&(r, c), &v) in js.iter().zip(&jv) { g[c] += y[r] * v; }
        g
    };
    let h = 1e-6;
    let mut worst = (0.0f64, 0, 0);
    for i in 0..nv {
        let mut zp = z.clone(); zp[i] += h;
        let mut zm = z.clone(); zm[i] -= h;
        let gp = grad_l(&zp);
        let gm = grad_l(&zm);
        for j in 0..nv {
            let fd = (gp[j] - gm[j]) / (2.0 * h);
            let err = (dense[j][i] - fd).abs() / fd.abs().max(dense[j][i].abs()).max(1.0);
            if err > worst.0 { worst = (err, j, i); }
        }
    }
    println!("worst hessian rel err {:.3e} at ({}, {})", worst.0, worst.1, worst.2);
    let l = p.layout;
    println!("indices: d0={} v0={} tf0={} pb0={}", l.d(0), l.v(0), l.t_f(0), l.p_bat(0));
}
