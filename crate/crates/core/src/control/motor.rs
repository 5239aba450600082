//! Drive motor: saturation, deadband and gear backlash.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorModel {
    /// Force at full command, N.
    pub f_max: f64,
    /// Commands with magnitude below this produce no force.
    pub deadband: f64,
    /// Total wheel-angle slack of the gear train, rad. 0 disables backlash.
    pub backlash_angle: f64,
    /// Rate at which the motor side crosses the slack at full command, rad/s.
    pub slack_rate: f64,
}

impl Default for MotorModel {
    fn default() -> Self {
        Self {
            f_max: 10.0,
            deadband: 0.05,
            backlash_angle: 0.0,
            slack_rate: 20.0,
        }
    }
}

impl MotorModel {
    pub fn validate(&self) -> Result<()> {
        ensure(self.f_max.is_finite() && self.f_max > 0.0, "f_max > 0")?;
        ensure((0.0..1.0).contains(&self.deadband), "0 <= deadband < 1")?;
        ensure(
            self.backlash_angle.is_finite() && self.backlash_angle >= 0.0,
            "backlash_angle >= 0",
        )?;
        ensure(self.slack_rate.is_finite() && self.slack_rate > 0.0, "slack_rate > 0")
    }
}

/// Position of the motor side inside the gear slack, in
/// `[-backlash_angle/2, +backlash_angle/2]`. The extremes are the two contact
/// faces; force passes only while pressed against the face matching the
/// command's sign.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BacklashState {
    pub slack: f64,
}

/// Drive force for normalized command `u` held over `dt`, and the updated slack.
pub fn motor_apply(model: &MotorModel, u: f64, backlash: BacklashState, dt: f64) -> (f64, BacklashState) {
    let u = u.clamp(-1.0, 1.0);
    if u.abs() < model.deadband || u == 0.0 {
        return (0.0, backlash);
    }
    let force = u * model.f_max;
    if model.backlash_angle == 0.0 {
        return (force, backlash);
    }

    let half = 0.5 * model.backlash_angle;
    let face = half.copysign(u);
    let travel = u.abs() * model.slack_rate * dt;
    let slack = if u > 0.0 {
        (backlash.slack + travel).min(face)
    } else {
        (backlash.slack - travel).max(face)
    };
    let engaged = slack == face;
    (if engaged { force } else { 0.0 }, BacklashState { slack })
}
