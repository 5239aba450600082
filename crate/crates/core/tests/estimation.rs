use balance_core::estimation::{diff_step, DifferentiatorConfig, DifferentiatorState, Estimator};
use balance_core::plant::{PlantParams, PlantState};
use balance_core::sensors::{observe, Calibration, NoiseConfig, SensorGeometry};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(cfg: &DifferentiatorConfig, xs: &[f64]) -> Vec<f64> {
    let mut st = DifferentiatorState::default();
    xs.iter()
        .map(|&x| {
            let (next, y) = diff_step(cfg, st, x);
            st = next;
            y
        })
        .collect()
}

/// Drives the estimator along a prescribed trajectory with ideal, noise-free sensors.
fn estimate_along(traj: impl Fn(f64) -> PlantState, ticks: usize) -> Vec<balance_core::estimation::EstimatedState> {
    let pp = PlantParams::default();
    let g = SensorGeometry::default();
    let cal = Calibration::ideal(&pp, &g, 0.0).unwrap();
    let mut est = Estimator::new(pp, g, DifferentiatorConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..=ticks)
        .map(|n| {
            let frame = observe(&pp, &g, &cal, &traj(n as f64 * 1e-3), &NoiseConfig::OFF, &mut rng).unwrap();
            est.estimate(&frame, &cal)
        })
        .collect()
}

#[test]
fn rest_estimates_zero() {
    let out = estimate_along(|_| PlantState::default(), 2000);
    assert!(out
        .iter()
        .all(|e| e.x == 0.0 && e.v == 0.0 && e.d == 0.0 && e.d_prime == 0.0));
}

#[test]
fn constant_velocity_converges() {
    let out = estimate_along(|t| PlantState::new(0.2 * t, 0.0, 0.2, 0.0), 1000);
    let v = out[1000].v;
    assert!((v - 0.2).abs() < 0.02 * 0.2, "v = {v}");
}

#[test]
fn tilt_ramp_rate_converges() {
    let out = estimate_along(|t| PlantState::new(0.0, 0.1 * t, 0.0, 0.1), 1000);
    let expected = 2.0 * 0.08 * 0.1;
    let dp = out[1000].d_prime;
    assert!((dp - expected).abs() < 0.05 * expected, "d' = {dp}");
}

proptest! {
    #[test]
    fn linear_in_input(a in -5.0..5.0f64, b in -5.0..5.0f64, u in prop::collection::vec(-1.0..1.0f64, 50), w in prop::collection::vec(-1.0..1.0f64, 50)) {
        let cfg = DifferentiatorConfig::default();
        let mixed: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let (yu, yw, ym) = (run(&cfg, &u), run(&cfg, &w), run(&cfg, &mixed));
        for i in 0..50 {
            prop_assert!((ym[i] - (a * yu[i] + b * yw[i])).abs() < 1e-9 * (1.0 + ym[i].abs()));
        }
    }

    #[test]
    fn bounded_for_bounded_increments(steps in prop::collection::vec(-1.0..1.0f64, 200), c in 0.001..1.0f64) {
        let cfg = DifferentiatorConfig::default();
        let mut x = 0.0;
        let xs: Vec<f64> = steps.iter().map(|s| { x += s * c; x }).collect();
        for y in run(&cfg, &xs) {
            prop_assert!(y.abs() <= c / cfg.t_d * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ramp_closed_form(slope in -10.0..10.0f64, alpha in 0.0..0.999f64) {
        let cfg = DifferentiatorConfig { alpha, ..DifferentiatorConfig::default() };
        let xs: Vec<f64> = (0..300).map(|i| slope * f64::from(i) * cfg.t_d).collect();
        for (n, y) in run(&cfg, &xs).into_iter().enumerate().skip(1) {
            let closed = slope * (1.0 - alpha.powi(n as i32));
            prop_assert!((y - closed).abs() < 1e-9 * (1.0 + slope.abs()));
        }
    }
}
