use balance_core::plant::{PlantParams, PlantState};
use balance_core::sensors::{
    encoder_read, ir_distance, observe, ticks_to_position, tilt_proxy, Calibration, NoiseConfig, SensorGeometry, Side,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frame_at(theta: f64, cal: &Calibration) -> balance_core::sensors::SensorFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    observe(
        &PlantParams::default(),
        &SensorGeometry::default(),
        cal,
        &PlantState::new(0.0, theta, 0.0, 0.0),
        &NoiseConfig::OFF,
        &mut rng,
    )
    .unwrap()
}

#[test]
fn calibrated_zero_with_asymmetric_biases() {
    let mut upright = frame_at(0.0, &Calibration::default());
    let offsets = [0.003, -0.0011, 0.0007, -0.004];
    upright.ir_front[0] += offsets[0];
    upright.ir_front[1] += offsets[1];
    upright.ir_back[0] += offsets[2];
    upright.ir_back[1] += offsets[3];
    let cal = Calibration::capture(&upright);
    assert_eq!(tilt_proxy(&upright, &cal), 0.0);
}

#[test]
fn tilt_proxy_strictly_increasing() {
    let pp = PlantParams::default();
    let g = SensorGeometry::default();
    let mut prev = f64::NEG_INFINITY;
    // the back edge touches the floor near 0.37 rad with default geometry
    for i in -3600..=3600 {
        let theta = f64::from(i) * 1e-4;
        let f = ir_distance(&pp, &g, theta, Side::Front).unwrap();
        let b = ir_distance(&pp, &g, theta, Side::Back).unwrap();
        assert!(f - b > prev);
        prev = f - b;
    }
}

proptest! {
    #[test]
    fn tilt_proxy_is_odd(theta in -0.35..0.35f64) {
        let cal = Calibration::default();
        prop_assert_eq!(tilt_proxy(&frame_at(theta, &cal), &cal), -tilt_proxy(&frame_at(-theta, &cal), &cal));
    }

    #[test]
    fn tilt_proxy_closed_form(theta in -0.3..0.3f64) {
        let cal = Calibration::default();
        let d = tilt_proxy(&frame_at(theta, &cal), &cal);
        prop_assert!((d - 2.0 * 0.08 * theta.tan()).abs() < 1e-12);
    }

    #[test]
    fn encoder_round_trip_within_one_tick(p in -50.0..50.0f64) {
        let pp = PlantParams::default();
        let g = SensorGeometry::default();
        let ticks = encoder_read(&pp, &g, p, &Calibration::default())[0];
        let back = ticks_to_position(&g, &pp, ticks as f64);
        prop_assert!((back - p).abs() <= g.tick_distance(&pp));
    }
}
