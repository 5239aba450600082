//! Nonlinear cart-pole dynamics of the balancing robot.
//!
//! State is `(p, theta, p_dot, theta_dot)` with `theta` measured from upright.
//! Positive `theta` leans the bob toward `-p`; a positive base force `F`
//! therefore increases `theta_dot`, which is the orientation under which the
//! linearization reproduces the textbook state-space matrices exactly.

use nalgebra::{Matrix2x4, Matrix4, Matrix4x1, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Physical constants of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Base (cart) mass `M` in kg.
    pub base_mass: f64,
    /// Balanced body mass `m` in kg.
    pub bob_mass: f64,
    /// Moment of inertia `J` of the body about its center of mass, kg·m².
    pub bob_inertia: f64,
    /// Distance `l` from the axle to the body's center of mass, m.
    pub arm_length: f64,
    /// Viscous friction `b` on base velocity, N·s/m.
    pub friction: f64,
    pub gravity: f64,
    pub wheel_radius: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        let bob_mass = 0.5;
        let arm_length = 0.3;
        Self {
            base_mass: 1.0,
            bob_mass,
            bob_inertia: bob_mass * arm_length * arm_length / 3.0,
            arm_length,
            friction: 0.1,
            gravity: 9.81,
            wheel_radius: 0.0508,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.base_mass,
            self.bob_mass,
            self.bob_inertia,
            self.arm_length,
            self.friction,
            self.gravity,
            self.wheel_radius,
        ];
        ensure(all.iter().all(|v| v.is_finite()), "plant parameters finite")?;
        ensure(self.base_mass > 0.0, "M > 0")?;
        ensure(self.bob_mass > 0.0, "m > 0")?;
        ensure(self.arm_length > 0.0, "l > 0")?;
        ensure(self.wheel_radius > 0.0, "r > 0")?;
        ensure(self.bob_inertia >= 0.0, "J >= 0")?;
        ensure(self.friction >= 0.0, "b >= 0")?;
        ensure(self.gravity > 0.0, "g > 0")?;
        ensure(self.denominator() > 0.0, "J(M+m) + M*m*l^2 > 0")
    }

    /// `D = J(M+m) + M·m·l²`, the common denominator of the linear model.
    pub fn denominator(&self) -> f64 {
        let (big_m, m, j, l) = (self.base_mass, self.bob_mass, self.bob_inertia, self.arm_length);
        j * (big_m + m) + big_m * m * l * l
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub p: f64,
    pub theta: f64,
    pub p_dot: f64,
    pub theta_dot: f64,
}

impl PlantState {
    pub const fn new(p: f64, theta: f64, p_dot: f64, theta_dot: f64) -> Self {
        Self {
            p,
            theta,
            p_dot,
            theta_dot,
        }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.p, self.theta, self.p_dot, self.theta_dot)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Linearized model `x' = A x + B u`, `y = C x` about the upright equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Matrix4<f64>,
    pub b: Matrix4x1<f64>,
    pub c: Matrix2x4<f64>,
}

/// Time derivative `(p_dot, theta_dot, p_ddot, theta_ddot)` under base force `force`.
///
/// Solves the coupled 2×2 mass-matrix system for the accelerations.
pub fn derivatives(params: &PlantParams, state: &PlantState, force: f64) -> Result<Vector4<f64>> {
    let PlantParams {
        base_mass: big_m,
        bob_mass: m,
        bob_inertia: j,
        arm_length: l,
        friction: b,
        gravity: g,
        ..
    } = *params;
    let (sin, cos) = state.theta.sin_cos();
    let ml = m * l;

    // [ M+m       -ml cos ] [p_ddot    ]   [ -b p_dot - ml sin theta_dot^2 + F ]
    // [ -ml cos   J+ml^2  ] [theta_ddot] = [ m g l sin                         ]
    let m11 = big_m + m;
    let m12 = -ml * cos;
    let m22 = j + ml * l;
    let det = m11 * m22 - m12 * m12;
    if det.is_nan() || det.abs() <= f64::EPSILON * m11 * m22 {
        return Err(Error::SingularMassMatrix { det });
    }
    let rhs1 = -b * state.p_dot - ml * sin * state.theta_dot * state.theta_dot + force;
    let rhs2 = ml * g * sin;

    let p_ddot = (m22 * rhs1 - m12 * rhs2) / det;
    let theta_ddot = (m11 * rhs2 - m12 * rhs1) / det;
    Ok(Vector4::new(state.p_dot, state.theta_dot, p_ddot, theta_ddot))
}

/// One classical RK4 step with `force` held constant over `dt`.
pub fn step(params: &PlantParams, state: &PlantState, force: f64, dt: f64) -> Result<PlantState> {
    ensure(dt > 0.0 && dt.is_finite(), "dt > 0")?;
    let x0 = state.to_vector();
    let f = |x: &Vector4<f64>| {
        if x.iter().all(|v| v.is_finite()) {
            derivatives(params, &PlantState::from_vector(x), force)
        } else {
            Err(Error::IntegrationDiverged)
        }
    };

    let k1 = f(&x0)?;
    let k2 = f(&(x0 + k1 * (dt / 2.0)))?;
    let k3 = f(&(x0 + k2 * (dt / 2.0)))?;
    let k4 = f(&(x0 + k3 * dt))?;
    let next = PlantState::from_vector(&(x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));

    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::IntegrationDiverged)
    }
}

/// Total mechanical energy (kinetic plus gravitational, zero at the axle height).
pub fn energy(params: &PlantParams, state: &PlantState) -> f64 {
    let PlantParams {
        base_mass: big_m,
        bob_mass: m,
        bob_inertia: j,
        arm_length: l,
        gravity: g,
        ..
    } = *params;
    let cos = state.theta.cos();
    0.5 * (big_m + m) * state.p_dot * state.p_dot - m * l * state.p_dot * state.theta_dot * cos
        + 0.5 * (j + m * l * l) * state.theta_dot * state.theta_dot
        + m * g * l * cos
}

/// Analytic linearization about the upright origin.
pub fn linearize(params: &PlantParams) -> Result<StateSpace> {
    params.validate()?;
    let PlantParams {
        base_mass: big_m,
        bob_mass: m,
        bob_inertia: j,
        arm_length: l,
        friction: b,
        gravity: g,
        ..
    } = *params;
    let d = params.denominator();
    let inertia = j + m * l * l;

    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 0.0,                         1.0,                0.0,
        0.0, 0.0,                         0.0,                1.0,
        0.0, m * m * g * l * l / d,       -inertia * b / d,   0.0,
        0.0, m * g * l * (big_m + m) / d, -m * l * b / d,     0.0,
    );
    let b_col = Matrix4x1::new(0.0, 0.0, inertia / d, m * l / d);
    #[rustfmt::skip]
    let c = Matrix2x4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
    );
    Ok(StateSpace { a, b: b_col, c })
}
