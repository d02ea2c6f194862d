//! Preceding-vehicle prediction over the MPC horizon and the two prediction
//! uncertainty models: cumulative Gaussian acceleration noise and a phase
//! shift of the predicted speed profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;
use crate::{Error, Result};

/// Horizon-aligned prediction of the preceding vehicle; `n_steps() + 1`
/// entries per field, position Euler-consistent with speed.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecedingPrediction {
    pub t0: f64,
    pub dt: f64,
    pub d: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl PrecedingPrediction {
    pub fn n_steps(&self) -> usize {
        self.d.len() - 1
    }

    /// Rebuilds positions and accelerations from the speed profile.
    fn reintegrate(&mut self) {
        let n = self.v.len();
        for k in 0..n - 1 {
            self.d[k + 1] = self.d[k] + self.v[k] * self.dt;
            self.a[k] = (self.v[k + 1] - self.v[k]) / self.dt;
        }
        self.a[n - 1] = 0.0;
    }

    /// Largest position/speed Euler inconsistency (m); for tests.
    pub fn consistency_defect(&self) -> f64 {
        self.d
            .windows(2)
            .zip(&self.v)
            .map(|(w, &v)| (w[1] - w[0] - v * self.dt).abs())
            .fold(0.0, f64::max)
    }
}

/// Uncertainty configuration: Gaussian acceleration noise `(sigma, mu)` and
/// the maximum phase-shift magnitude `p_s` (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Acceleration noise standard deviation (m/s^2).
    pub sigma: f64,
    /// Acceleration noise mean (m/s^2).
    pub mu: f64,
    /// Maximum shift magnitude (s); the per-cycle shift is drawn uniformly
    /// from `[-p_s/2, p_s/2]` in whole steps.
    pub p_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub order: NoiseOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseOrder {
    #[default]
    ShiftThenGaussian,
    GaussianThenShift,
}

impl NoiseConfig {
    pub fn ideal(seed: u64) -> Self {
        Self {
            sigma: 0.0,
            mu: 0.0,
            p_s: 0.0,
            seed,
            order: NoiseOrder::default(),
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.sigma == 0.0 && self.mu == 0.0 && self.p_s == 0.0
    }
}

/// Ground-truth slice of the scenario starting at `t0`, `n` steps of `dt`.
/// Beyond the end of the data the last speed is held.
pub fn predict_preceding(s: &Scenario, t0: f64, n: usize, dt: f64) -> Result<PrecedingPrediction> {
    if (dt - s.dt).abs() > 1e-9 {
        return Err(Error::PredictionRange(format!(
            "prediction step {dt} must match scenario step {}",
            s.dt
        )));
    }
    let k0 = s.index_at(t0)?;
    let len = s.samples.len();
    let mut d = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    let mut a = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let k = k0 + i;
        if k < len {
            d.push(s.samples[k].d_p);
            v.push(s.samples[k].v_p);
            a.push(s.samples[k].a_p);
        } else {
            // Hold the last observed speed, integrate position forward.
            let v_hold = s.samples[len - 1].v_p;
            d.push(d[i - 1] + v[i - 1] * dt);
            v.push(v_hold);
            a.push(0.0);
        }
    }
    if let Some(last) = a.last_mut() {
        *last = 0.0;
    }
    Ok(PrecedingPrediction { t0, dt, d, v, a })
}

/// Adds i.i.d. `N(mu, sigma^2)` noise to each per-step acceleration and
/// rebuilds speed (clamped at zero) and position from it.
pub fn inject_gaussian_accel_noise(
    pred: &PrecedingPrediction,
    sigma: f64,
    mu: f64,
    seed: u64,
) -> PrecedingPrediction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    inject_gaussian_accel_noise_rng(pred, sigma, mu, &mut rng)
}

pub fn inject_gaussian_accel_noise_rng<R: Rng>(
    pred: &PrecedingPrediction,
    sigma: f64,
    mu: f64,
    rng: &mut R,
) -> PrecedingPrediction {
    let normal = Normal::new(mu, sigma).expect("sigma must be nonnegative");
    let n = pred.n_steps();
    let mut out = pred.clone();
    for k in 0..n {
        let noisy_a = pred.a[k] + normal.sample(rng);
        // Physical speeds: clamp at zero, then re-derive the acceleration.
        out.v[k + 1] = (out.v[k] + noisy_a * pred.dt).max(0.0);
    }
    out.reintegrate();
    out
}

/// Time-shifts the speed profile by `n_s` steps, padding the displaced
/// boundary with the nearest defined value, and re-integrates position.
pub fn inject_phase_shift(pred: &PrecedingPrediction, n_s: i64) -> Result<PrecedingPrediction> {
    let n = pred.n_steps();
    if n_s.unsigned_abs() as usize >= n {
        return Err(Error::ShiftTooLarge {
            shift: n_s,
            horizon: n,
        });
    }
    let mut out = pred.clone();
    for k in 0..=n {
        let src = (k as i64 + n_s).clamp(0, n as i64) as usize;
        out.v[k] = pred.v[src];
    }
    out.reintegrate();
    Ok(out)
}

/// Uniform integer shift over `[-p_s/(2 dt), p_s/(2 dt)]`, drawn fresh each
/// MPC cycle.
pub fn sample_shift<R: Rng>(cfg: &NoiseConfig, dt: f64, rng: &mut R) -> i64 {
    let n_max = (cfg.p_s / (2.0 * dt)).floor() as i64;
    if n_max == 0 {
        return 0;
    }
    rng.gen_range(-n_max..=n_max)
}

/// Applies the configured uncertainty: shift first, then Gaussian noise
/// (swapped by [`NoiseOrder::GaussianThenShift`]).
pub fn apply_noise<R: Rng>(
    pred: &PrecedingPrediction,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<PrecedingPrediction> {
    if cfg.is_ideal() {
        return Ok(pred.clone());
    }
    let shift = sample_shift(cfg, pred.dt, rng);
    let shifted_then_noisy = |p: &PrecedingPrediction, rng: &mut R| -> Result<PrecedingPrediction> {
        let shifted = if shift != 0 {
            inject_phase_shift(p, shift)?
        } else {
            p.clone()
        };
        Ok(if cfg.sigma != 0.0 || cfg.mu != 0.0 {
            inject_gaussian_accel_noise_rng(&shifted, cfg.sigma, cfg.mu, rng)
        } else {
            shifted
        })
    };
    match cfg.order {
        NoiseOrder::ShiftThenGaussian => shifted_then_noisy(pred, rng),
        NoiseOrder::GaussianThenShift => {
            let noisy = if cfg.sigma != 0.0 || cfg.mu != 0.0 {
                inject_gaussian_accel_noise_rng(pred, cfg.sigma, cfg.mu, rng)
            } else {
                pred.clone()
            };
            if shift != 0 {
                inject_phase_shift(&noisy, shift)
            } else {
                Ok(noisy)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_corridor_scenario, CorridorConfig};
    use approx::assert_relative_eq;

    fn flat_prediction(n: usize, v0: f64) -> PrecedingPrediction {
        let dt = 0.1;
        let mut p = PrecedingPrediction {
            t0: 0.0,
            dt,
            d: vec![0.0; n + 1],
            v: vec![v0; n + 1],
            a: vec![0.0; n + 1],
        };
        p.reintegrate();
        p
    }

    #[test]
    fn ideal_prediction_is_identity_slice() {
        let sc = generate_corridor_scenario(1, &CorridorConfig::default());
        let pred = predict_preceding(&sc, 5.0, 150, 0.1).unwrap();
        let k0 = sc.index_at(5.0).unwrap();
        for i in 0..=150 {
            assert_eq!(pred.d[i], sc.samples[k0 + i].d_p);
            assert_eq!(pred.v[i], sc.samples[k0 + i].v_p);
        }
        assert!(pred.consistency_defect() <= 1e-6);
    }

    #[test]
    fn zero_step_prediction_is_current_sample() {
        let sc = generate_corridor_scenario(1, &CorridorConfig::default());
        let pred = predict_preceding(&sc, 2.0, 0, 0.1).unwrap();
        assert_eq!(pred.d.len(), 1);
        let k0 = sc.index_at(2.0).unwrap();
        assert_eq!(pred.d[0], sc.samples[k0].d_p);
    }

    #[test]
    fn prediction_beyond_end_holds_last_speed() {
        let sc = generate_corridor_scenario(1, &CorridorConfig::default());
        let t_last = sc.samples.last().unwrap().t;
        let pred = predict_preceding(&sc, t_last - 1.0, 150, 0.1).unwrap();
        let v_hold = sc.samples.last().unwrap().v_p;
        assert_eq!(pred.v[150], v_hold);
        assert!(pred.consistency_defect() <= 1e-9);
    }

    #[test]
    fn prediction_out_of_range_errors() {
        let sc = generate_corridor_scenario(1, &CorridorConfig::default());
        assert!(predict_preceding(&sc, -1.0, 10, 0.1).is_err());
        assert!(predict_preceding(&sc, 1e9, 10, 0.1).is_err());
        assert!(predict_preceding(&sc, 0.05, 10, 0.1).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let sc = generate_corridor_scenario(2, &CorridorConfig::default());
        let pred = predict_preceding(&sc, 0.0, 150, 0.1).unwrap();
        let noisy = inject_gaussian_accel_noise(&pred, 0.0, 0.0, 9);
        assert_eq!(noisy.v, pred.v);
        assert_eq!(noisy.d, pred.d);
    }

    #[test]
    fn pure_drift_accumulates_linearly() {
        let pred = flat_prediction(100, 10.0);
        let noisy = inject_gaussian_accel_noise(&pred, 0.0, 0.5, 1);
        assert_relative_eq!(noisy.v[50] - pred.v[50], 2.5, max_relative = 1e-12);
    }

    #[test]
    fn noise_variance_matches_wiener_scaling() {
        // Smoke-scale version of the acceptance Monte-Carlo: sigma^2 k dt^2.
        let pred = flat_prediction(100, 10.0);
        let (sigma, k) = (0.75, 100);
        let n_mc = 4000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for seed in 0..n_mc {
            let noisy = inject_gaussian_accel_noise(&pred, sigma, 0.0, seed);
            let dev = noisy.v[k] - pred.v[k];
            sum += dev;
            sum2 += dev * dev;
        }
        let mean = sum / n_mc as f64;
        let var = sum2 / n_mc as f64 - mean * mean;
        let expected = sigma * sigma * k as f64 * 0.01;
        assert_relative_eq!(var, expected, max_relative = 0.10);
    }

    #[test]
    fn noisy_speed_never_negative() {
        let pred = flat_prediction(150, 0.5);
        for seed in 0..20 {
            let noisy = inject_gaussian_accel_noise(&pred, 2.0, -0.5, seed);
            assert!(noisy.v.iter().all(|&v| v >= 0.0));
            assert!(noisy.consistency_defect() <= 1e-9);
        }
    }

    #[test]
    fn phase_shift_examples() {
        let mut pred = PrecedingPrediction {
            t0: 0.0,
            dt: 0.1,
            d: vec![0.0; 5],
            v: vec![5.0, 5.0, 6.0, 7.0, 8.0],
            a: vec![0.0; 5],
        };
        pred.reintegrate();
        let fwd = inject_phase_shift(&pred, 2).unwrap();
        assert_eq!(fwd.v, vec![6.0, 7.0, 8.0, 8.0, 8.0]);
        let back = inject_phase_shift(&pred, -2).unwrap();
        assert_eq!(back.v, vec![5.0, 5.0, 5.0, 5.0, 6.0]);
        let ident = inject_phase_shift(&pred, 0).unwrap();
        assert_eq!(ident.v, pred.v);
        assert_eq!(ident.d, pred.d);
        assert!(inject_phase_shift(&pred, 4).is_err());
        assert!(inject_phase_shift(&pred, -4).is_err());
    }

    #[test]
    fn shift_sampling_range_and_determinism() {
        use rand::SeedableRng;
        let cfg = NoiseConfig {
            sigma: 0.0,
            mu: 0.0,
            p_s: 3.0,
            seed: 5,
            order: NoiseOrder::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<i64> = (0..2000).map(|_| sample_shift(&cfg, 0.1, &mut rng)).collect();
        assert!(draws.iter().all(|&s| (-15..=15).contains(&s)));
        assert!(draws.iter().any(|&s| s == -15));
        assert!(draws.iter().any(|&s| s == 15));
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let again: Vec<i64> = (0..2000).map(|_| sample_shift(&cfg, 0.1, &mut rng2)).collect();
        assert_eq!(draws, again);

        let zero = NoiseConfig::ideal(0);
        assert_eq!(sample_shift(&zero, 0.1, &mut rng), 0);
    }

    #[test]
    fn combined_noise_keeps_euler_consistency() {
        let sc = generate_corridor_scenario(4, &CorridorConfig::default());
        let pred = predict_preceding(&sc, 10.0, 150, 0.1).unwrap();
        let cfg = NoiseConfig {
            sigma: 0.5,
            mu: 0.25,
            p_s: 1.0,
            seed: 11,
            order: NoiseOrder::ShiftThenGaussian,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy = apply_noise(&pred, &cfg, &mut rng).unwrap();
        assert!(noisy.consistency_defect() <= 1e-9);
        assert_eq!(noisy.d[0], pred.d[0]);
        assert_eq!(noisy.v[0], pred.v[0]);
    }
}
