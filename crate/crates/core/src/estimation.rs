//! Leaky discrete differentiator and per-tick assembly of the controller's state.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::plant::PlantParams;
use crate::sensors::{ticks_to_position, tilt_proxy, Calibration, SensorFrame, SensorGeometry};

/// `y <- alpha*y + sign*(1-alpha)*(x_i - x_{i-1})/t_d`.
///
/// `sign = +1` gives a true derivative (DC gain +1); `-1` reproduces the
/// minus sign of the firmware formula as printed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferentiatorConfig {
    pub alpha: f64,
    pub t_d: f64,
    pub sign: f64,
}

impl Default for DifferentiatorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            t_d: 1e-3,
            sign: 1.0,
        }
    }
}

impl DifferentiatorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure((0.0..1.0).contains(&self.alpha), "0 <= alpha < 1")?;
        ensure(self.t_d.is_finite() && self.t_d > 0.0, "t_d > 0")?;
        ensure(self.sign == 1.0 || self.sign == -1.0, "sign = +1 or -1")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DifferentiatorState {
    pub y: f64,
    pub x_prev: f64,
    pub primed: bool,
}

impl DifferentiatorState {
    /// Forgets all history; the next sample primes the filter again.
    pub fn reprime(&mut self) {
        *self = Self::default();
    }
}

/// Advances the differentiator by one sample. The first (unprimed) sample only
/// records `x_i` and yields 0.
pub fn diff_step(cfg: &DifferentiatorConfig, st: DifferentiatorState, x_i: f64) -> (DifferentiatorState, f64) {
    if !st.primed {
        let next = DifferentiatorState {
            y: 0.0,
            x_prev: x_i,
            primed: true,
        };
        return (next, 0.0);
    }
    let y = cfg.alpha * st.y + cfg.sign * (1.0 - cfg.alpha) * (x_i - st.x_prev) / cfg.t_d;
    (
        DifferentiatorState {
            y,
            x_prev: x_i,
            primed: true,
        },
        y,
    )
}

/// The controller's view of the robot: travel, wheel speed, tilt proxy and its rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatedState {
    pub x: f64,
    pub v: f64,
    pub d: f64,
    pub d_prime: f64,
}

/// Turns sensor frames into [`EstimatedState`]s, one frame per tick.
#[derive(Debug, Clone)]
pub struct Estimator {
    params: PlantParams,
    geom: SensorGeometry,
    cfg: DifferentiatorConfig,
    velocity: DifferentiatorState,
    tilt_rate: DifferentiatorState,
}

impl Estimator {
    pub fn new(params: PlantParams, geom: SensorGeometry, cfg: DifferentiatorConfig) -> Self {
        Self {
            params,
            geom,
            cfg,
            velocity: DifferentiatorState::default(),
            tilt_rate: DifferentiatorState::default(),
        }
    }

    pub fn config(&self) -> &DifferentiatorConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.velocity.reprime();
        self.tilt_rate.reprime();
    }

    pub fn estimate(&mut self, frame: &SensorFrame, cal: &Calibration) -> EstimatedState {
        let mean_ticks = 0.5 * (frame.enc_left as f64 + frame.enc_right as f64);
        let x = ticks_to_position(&self.geom, &self.params, mean_ticks);
        let d = tilt_proxy(frame, cal);
        let (velocity, v) = diff_step(&self.cfg, self.velocity, x);
        let (tilt_rate, d_prime) = diff_step(&self.cfg, self.tilt_rate, d);
        self.velocity = velocity;
        self.tilt_rate = tilt_rate;
        EstimatedState { x, v, d, d_prime }
    }
}
