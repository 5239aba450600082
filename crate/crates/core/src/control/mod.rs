//! Regulators: the summing-junction PD law, full-state feedback, LQR synthesis
//! and the actuator model.

mod care;
mod motor;

pub use care::{care_residual, care_solve, lqr, lqr_gain, CareOptions, LqrSolution, LqrWeights};
pub use motor::{motor_apply, BacklashState, MotorModel};

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::estimation::EstimatedState;

/// Gains of the PD summing junction; each maps its signal onto the normalized command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    /// On the position error `reference - x`.
    pub k_err: f64,
    /// On the tilt proxy `d`.
    pub k_d: f64,
    /// On the tilt rate `d'`.
    pub k_dd: f64,
    /// On the wheel speed `v`.
    pub k_v: f64,
}

impl Default for GainSet {
    /// Tuned for the default plant, sensor geometry and 10 N motor.
    fn default() -> Self {
        Self {
            k_err: 0.1,
            k_d: 22.8,
            k_dd: 4.1,
            k_v: -0.22,
        }
    }
}

impl GainSet {
    pub fn validate(&self) -> Result<()> {
        ensure(
            [self.k_err, self.k_d, self.k_dd, self.k_v]
                .iter()
                .all(|k| k.is_finite()),
            "gains finite",
        )
    }
}

/// Normalized command from the PD summing junction. The reference enters
/// positively, measured position negatively, and the remaining three signals
/// positively.
pub fn pd_command(gains: &GainSet, est: &EstimatedState, reference: f64) -> f64 {
    gains.k_err * (reference - est.x) + gains.k_d * est.d + gains.k_dd * est.d_prime + gains.k_v * est.v
}

/// Gain row `k` over `(p, theta, p_dot, theta_dot)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateGain {
    pub k: [f64; 4],
}

impl StateGain {
    pub fn new(k: [f64; 4]) -> Self {
        Self { k }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::from(self.k)
    }

    pub fn negated(&self) -> Self {
        Self::new(self.k.map(|k| -k))
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.k.iter().all(|k| k.is_finite()), "state gains finite")
    }
}

/// `U = k · x`.
pub fn state_feedback(gain: &StateGain, state: &Vector4<f64>) -> f64 {
    gain.as_vector().dot(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_examples() {
        let zero = EstimatedState::default();
        assert_eq!(pd_command(&GainSet::default(), &zero, 0.0), 0.0);
        let none = GainSet {
            k_err: 0.0,
            k_d: 0.0,
            k_dd: 0.0,
            k_v: 0.0,
        };
        let est = EstimatedState {
            x: 0.4,
            v: -1.0,
            d: 0.3,
            d_prime: 2.0,
        };
        assert_eq!(pd_command(&none, &est, 0.7), 0.0);

        let gains = GainSet {
            k_err: 1.0,
            k_d: 2.0,
            k_dd: 0.5,
            k_v: 0.1,
        };
        let est = EstimatedState {
            x: 0.0,
            v: 0.3,
            d: 0.02,
            d_prime: -0.1,
        };
        assert!((pd_command(&gains, &est, 0.1) - 0.12).abs() < 1e-15);
    }

    #[test]
    fn state_feedback_examples() {
        let x = Vector4::new(0.1, 0.2, -0.1, 0.05);
        assert_eq!(state_feedback(&StateGain::new([0.0; 4]), &x), 0.0);
        assert_eq!(
            state_feedback(&StateGain::new([1.0, 2.0, 3.0, 4.0]), &Vector4::zeros()),
            0.0
        );
        assert!((state_feedback(&StateGain::new([1.0; 4]), &x) - 0.25).abs() < 1e-15);
    }
}
