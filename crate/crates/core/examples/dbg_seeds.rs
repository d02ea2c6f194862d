use ecodrive::scenario::{generate_corridor_scenario, CorridorConfig};

fn main() {
    let cfg = CorridorConfig::default();
    for seed in 0..24u64 {
        let sc = generate_corridor_scenario(seed, &cfg);
        let stopped = sc.samples.iter().filter(|s| s.v_p < 0.1).count();
        let slow = sc.samples.iter().filter(|s| s.v_p < 3.0).count();
        let vmin = sc.samples.iter().map(|s| s.v_p).fold(f64::INFINITY, f64::min);
        let vmean = sc.samples.iter().map(|s| s.v_p).sum::<f64>() / sc.samples.len() as f64;
        println!(
            "seed {seed:2}: stop_s {:5.1} slow_s {:5.1} vmin {vmin:5.2} vmean {vmean:5.2} dist {:6.0}",
            stopped as f64 * 0.1,
            slow as f64 * 0.1,
            sc.samples.last().unwrap().d_p
        );
    }
}
