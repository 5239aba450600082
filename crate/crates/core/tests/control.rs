use balance_core::control::{
    care_residual, care_solve, lqr_gain, motor_apply, pd_command, state_feedback, BacklashState, CareOptions, GainSet,
    LqrWeights, MotorModel, StateGain,
};
use balance_core::estimation::EstimatedState;
use balance_core::plant::{linearize, PlantParams};
use nalgebra::{DMatrix, Matrix4, Vector4};
use proptest::prelude::*;

fn plant_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    let ss = linearize(&PlantParams::default()).unwrap();
    (
        DMatrix::from_iterator(4, 4, ss.a.iter().copied()),
        DMatrix::from_iterator(4, 1, ss.b.iter().copied()),
    )
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_care(q: &DMatrix<f64>, r: f64) -> DMatrix<f64> {
    let (a, b) = plant_matrices();
    let r = DMatrix::from_element(1, 1, r);
    let p = care_solve(&a, &b, q, &r, &CareOptions::default()).unwrap();
    let res = care_residual(&a, &b, q, &r, &p).amax();
    assert!(res < 1e-9 * (1.0 + inf_norm(&p)), "residual {res}");
    assert!((&p - p.transpose()).amax() < 1e-12);
    assert!(p.clone().symmetric_eigenvalues().min() >= -1e-10);
    p
}

#[test]
fn care_on_default_plant() {
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 10.0, 0.1, 0.1]));
    check_care(&q, 1.0);
}

#[test]
fn lqr_closed_loop_stable() {
    let ss = linearize(&PlantParams::default()).unwrap();
    let k = lqr_gain(&ss, &LqrWeights::default()).unwrap();
    let closed = ss.a - ss.b * k.as_vector().transpose();
    let max_re = closed
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::MIN, f64::max);
    assert!(max_re < 0.0, "{max_re}");
}

#[test]
fn lqr_gain_rejects_bad_weights() {
    let ss = linearize(&PlantParams::default()).unwrap();
    let w = LqrWeights {
        r: 0.0,
        ..LqrWeights::default()
    };
    assert!(lqr_gain(&ss, &w).is_err());
}

fn weight_strategy() -> impl Strategy<Value = (Matrix4<f64>, f64)> {
    (
        prop::collection::vec(-2.0..2.0f64, 16),
        prop::collection::vec(0.0..20.0f64, 4),
        0.01..10.0f64,
    )
        .prop_map(|(f, diag, r)| {
            let factor = Matrix4::from_iterator(f) * 0.5;
            (
                factor * factor.transpose() + Matrix4::from_diagonal(&Vector4::from_vec(diag)),
                r,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn care_properties_for_random_weights((q, r) in weight_strategy()) {
        let qd = DMatrix::from_iterator(4, 4, q.iter().copied());
        check_care(&qd, r);
        let ss = linearize(&PlantParams::default()).unwrap();
        let k = lqr_gain(&ss, &LqrWeights { q, r }).unwrap();
        let closed = ss.a - ss.b * k.as_vector().transpose();
        prop_assert!(closed.complex_eigenvalues().iter().all(|e| e.re < 0.0));
    }

    #[test]
    fn gain_invariant_under_weight_scaling((q, r) in weight_strategy(), scale in 0.01..100.0f64) {
        let ss = linearize(&PlantParams::default()).unwrap();
        let k1 = lqr_gain(&ss, &LqrWeights { q, r }).unwrap().as_vector();
        let k2 = lqr_gain(&ss, &LqrWeights { q: q * scale, r: r * scale }).unwrap().as_vector();
        prop_assert!((k1 - k2).amax() < 1e-9 * (1.0 + k1.amax()), "{k1} vs {k2}");
    }

    #[test]
    fn pd_superposition(
        g in prop::array::uniform4(-10.0..10.0f64),
        h in prop::array::uniform4(-10.0..10.0f64),
        e in prop::array::uniform4(-1.0..1.0f64),
        f in prop::array::uniform4(-1.0..1.0f64),
        refs in prop::array::uniform2(-1.0..1.0f64),
        a in -3.0..3.0f64,
    ) {
        let gs = |k: [f64; 4]| GainSet { k_err: k[0], k_d: k[1], k_dd: k[2], k_v: k[3] };
        let es = |v: [f64; 4]| EstimatedState { x: v[0], v: v[1], d: v[2], d_prime: v[3] };
        let tol = 1e-10;
        // gains
        let sum_g = gs([g[0] + a * h[0], g[1] + a * h[1], g[2] + a * h[2], g[3] + a * h[3]]);
        let lhs = pd_command(&sum_g, &es(e), refs[0]);
        let rhs = pd_command(&gs(g), &es(e), refs[0]) + a * pd_command(&gs(h), &es(e), refs[0]);
        prop_assert!((lhs - rhs).abs() < tol);
        // signals
        let sum_e = es([e[0] + a * f[0], e[1] + a * f[1], e[2] + a * f[2], e[3] + a * f[3]]);
        let lhs = pd_command(&gs(g), &sum_e, refs[0] + a * refs[1]);
        let rhs = pd_command(&gs(g), &es(e), refs[0]) + a * pd_command(&gs(g), &es(f), refs[1]);
        prop_assert!((lhs - rhs).abs() < tol);
    }

    #[test]
    fn state_feedback_superposition(k in prop::array::uniform4(-10.0..10.0f64), x in prop::array::uniform4(-1.0..1.0f64), y in prop::array::uniform4(-1.0..1.0f64), a in -3.0..3.0f64) {
        let (xv, yv) = (Vector4::from(x), Vector4::from(y));
        let g = StateGain::new(k);
        let lhs = state_feedback(&g, &(xv + yv * a));
        prop_assert!((lhs - state_feedback(&g, &xv) - a * state_feedback(&g, &yv)).abs() < 1e-10);
    }

    #[test]
    fn motor_odd_without_backlash(u in -3.0..3.0f64, deadband in 0.0..0.5f64) {
        let m = MotorModel { deadband, backlash_angle: 0.0, ..MotorModel::default() };
        let s = BacklashState::default();
        prop_assert_eq!(motor_apply(&m, -u, s, 1e-3).0, -motor_apply(&m, u, s, 1e-3).0);
    }

    #[test]
    fn slack_stays_in_gap(us in prop::collection::vec(-1.5..1.5f64, 100)) {
        let m = MotorModel { backlash_angle: 0.03, deadband: 0.0, ..MotorModel::default() };
        let mut s = BacklashState::default();
        for u in us {
            let (f, next) = motor_apply(&m, u, s, 1e-3);
            prop_assert!(next.slack.abs() <= 0.015);
            prop_assert!(f == 0.0 || f.signum() == u.signum());
            s = next;
        }
    }
}
