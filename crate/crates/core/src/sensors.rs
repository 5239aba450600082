//! Infrared floor-distance sensors, shaft encoders and the front/back tilt proxy.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::plant::{PlantParams, PlantState};

/// Mounting geometry of the IR sensors and encoder resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// Longitudinal distance `s` of each IR pair from the axle (front at `+s`, back at `-s`).
    pub long_offset: f64,
    /// Vertical drop `q` of the IR sensors below the axle, body frame.
    pub drop: f64,
    pub ticks_per_rev: u32,
    /// ADC levels for IR quantization; 0 disables quantization.
    pub adc_levels: u32,
    /// Distance mapped onto the ADC full scale.
    pub adc_range: f64,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            long_offset: 0.08,
            drop: 0.02,
            ticks_per_rev: 360,
            adc_levels: 0,
            adc_range: 0.2,
        }
    }
}

impl SensorGeometry {
    pub fn validate(&self, params: &PlantParams) -> Result<()> {
        ensure(self.long_offset.is_finite() && self.long_offset > 0.0, "s > 0")?;
        ensure(self.drop.is_finite() && self.drop >= 0.0, "q >= 0")?;
        ensure(self.drop < params.wheel_radius, "q < wheel_radius")?;
        ensure(self.ticks_per_rev >= 1, "N >= 1")?;
        ensure(self.adc_levels != 1, "adc_levels = 0 or >= 2")?;
        ensure(self.adc_range.is_finite() && self.adc_range > 0.0, "adc_range > 0")
    }

    /// Distance travelled per encoder tick.
    pub fn tick_distance(&self, params: &PlantParams) -> f64 {
        2.0 * PI * params.wheel_radius / f64::from(self.ticks_per_rev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Front,
    Back,
}

/// Per-channel IR noise. Encoders are noise-free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation of additive Gaussian noise on each IR channel, m.
    pub ir_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { ir_sigma: 0.0005 }
    }
}

impl NoiseConfig {
    pub const OFF: Self = Self { ir_sigma: 0.0 };

    pub fn validate(&self) -> Result<()> {
        ensure(self.ir_sigma.is_finite() && self.ir_sigma >= 0.0, "ir_sigma >= 0")
    }
}

/// Raw measurements for one controller tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub ir_front: [f64; 2],
    pub ir_back: [f64; 2],
    pub enc_left: i64,
    pub enc_right: i64,
}

/// Offsets captured with the robot upright and at rest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Front pair then back pair.
    pub ir_bias: [f64; 4],
    pub enc_zero: [i64; 2],
}

impl Calibration {
    /// Takes the biases from a frame observed with zero calibration.
    pub fn capture(frame: &SensorFrame) -> Self {
        Self {
            ir_bias: [frame.ir_front[0], frame.ir_front[1], frame.ir_back[0], frame.ir_back[1]],
            enc_zero: [frame.enc_left, frame.enc_right],
        }
    }

    /// Averages the IR biases over `frames` (observed with zero calibration);
    /// encoder zeros come from the first frame. Identical frames give exactly
    /// the same result as [`Calibration::capture`].
    pub fn capture_mean(frames: &[SensorFrame]) -> Option<Self> {
        let first = Self::capture(frames.first()?);
        let n = frames.len() as f64;
        let mut ir_bias = first.ir_bias;
        for (i, bias) in ir_bias.iter_mut().enumerate() {
            let spread: f64 = frames
                .iter()
                .map(|f| Self::capture(f).ir_bias[i] - first.ir_bias[i])
                .sum();
            *bias += spread / n;
        }
        Some(Self { ir_bias, ..first })
    }

    /// Calibration an ideal, noise-free robot would record upright at position `p`.
    pub fn ideal(params: &PlantParams, geom: &SensorGeometry, p: f64) -> Result<Self> {
        let upright = ir_distance(params, geom, 0.0, Side::Front)?;
        let zero = raw_ticks(params, geom, p);
        Ok(Self {
            ir_bias: [upright; 4],
            enc_zero: [zero; 2],
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.ir_bias.iter().all(|b| b.is_finite()), "ir_bias finite")
    }
}

/// Distance along the body-fixed downward boresight from an IR sensor to the floor.
pub fn ir_distance(params: &PlantParams, geom: &SensorGeometry, theta: f64, side: Side) -> Result<f64> {
    if theta.is_nan() || theta.abs() >= FRAC_PI_2 {
        return Err(Error::FallenOver { theta });
    }
    let (sin, cos) = theta.sin_cos();
    let lever = match side {
        Side::Front => geom.long_offset * sin,
        Side::Back => -geom.long_offset * sin,
    };
    let distance = (params.wheel_radius - geom.drop * cos + lever) / cos;
    if distance > 0.0 {
        Ok(distance)
    } else {
        Err(Error::FallenOver { theta })
    }
}

/// Front-minus-back tilt proxy on bias-corrected, pair-averaged readings.
pub fn tilt_proxy(frame: &SensorFrame, cal: &Calibration) -> f64 {
    let front = 0.5 * ((frame.ir_front[0] - cal.ir_bias[0]) + (frame.ir_front[1] - cal.ir_bias[1]));
    let back = 0.5 * ((frame.ir_back[0] - cal.ir_bias[2]) + (frame.ir_back[1] - cal.ir_bias[3]));
    front - back
}

fn raw_ticks(params: &PlantParams, geom: &SensorGeometry, p: f64) -> i64 {
    let wheel_angle = p / params.wheel_radius;
    (f64::from(geom.ticks_per_rev) * wheel_angle / (2.0 * PI)).trunc() as i64
}

/// Encoder counts for base position `p`, truncated toward zero, relative to the calibrated zero.
pub fn encoder_read(params: &PlantParams, geom: &SensorGeometry, p: f64, cal: &Calibration) -> [i64; 2] {
    let raw = raw_ticks(params, geom, p);
    [raw - cal.enc_zero[0], raw - cal.enc_zero[1]]
}

pub fn ticks_to_position(geom: &SensorGeometry, params: &PlantParams, ticks: f64) -> f64 {
    ticks * geom.tick_distance(params)
}

fn quantize(geom: &SensorGeometry, distance: f64) -> f64 {
    if geom.adc_levels == 0 {
        return distance;
    }
    let top = f64::from(geom.adc_levels - 1);
    let level = (distance / geom.adc_range * top).round().clamp(0.0, top);
    level * geom.adc_range / top
}

/// Assembles one frame: ideal readings, IR noise, then optional ADC quantization.
///
/// Noise draws happen in a fixed order (front 0, front 1, back 0, back 1) so a
/// seeded `rng` reproduces frames exactly.
pub fn observe<R: Rng + ?Sized>(
    params: &PlantParams,
    geom: &SensorGeometry,
    cal: &Calibration,
    state: &PlantState,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<SensorFrame> {
    let front = ir_distance(params, geom, state.theta, Side::Front)?;
    let back = ir_distance(params, geom, state.theta, Side::Back)?;
    let mut readings = [front, front, back, back];
    if noise.ir_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.ir_sigma).map_err(|_| Error::InvalidParameter {
            invariant: "ir_sigma >= 0",
        })?;
        for r in readings.iter_mut() {
            *r += normal.sample(rng);
        }
    }
    for r in readings.iter_mut() {
        *r = quantize(geom, r.max(0.0));
    }
    let [enc_left, enc_right] = encoder_read(params, geom, state.p, cal);
    Ok(SensorFrame {
        ir_front: [readings[0], readings[1]],
        ir_back: [readings[2], readings[3]],
        enc_left,
        enc_right,
    })
}
