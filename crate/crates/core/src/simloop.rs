//! Fixed-tick closed loop: observe, estimate, control, actuate, integrate.

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{
    lqr_gain, motor_apply, pd_command, state_feedback, BacklashState, GainSet, LqrWeights, MotorModel, StateGain,
};
use crate::error::{ensure, Error, Result};
use crate::estimation::{DifferentiatorConfig, EstimatedState, Estimator};
use crate::plant::{self, PlantParams, PlantState};
use crate::sensors::{observe, Calibration, NoiseConfig, SensorFrame, SensorGeometry};

/// Final-window length and bands used by [`Summary::settled`].
pub const SETTLE_WINDOW: f64 = 1.0;
pub const SETTLE_THETA: f64 = 0.01;
pub const SETTLE_POSITION: f64 = 0.02;
/// Sensor readings averaged by the pre-run calibration.
pub const CALIBRATION_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerChoice {
    Pd(GainSet),
    /// Gains applied as base force `U = k · (x - x_ref)` in newtons.
    StateFeedback(StateGain),
    /// Gains synthesized from the linearized plant at episode start.
    Lqr(LqrWeights),
}

impl ControllerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pd(_) => "pd",
            Self::StateFeedback(_) => "sfb",
            Self::Lqr(_) => "lqr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSource {
    Constant(f64),
    /// `(time, value)` breakpoints; piecewise constant and right-continuous.
    Schedule(Vec<(f64, f64)>),
    /// Joystick-style input; `value` is the latest accepted command, clamped to `±range`.
    Live {
        range: f64,
        value: f64,
    },
}

impl Default for ReferenceSource {
    fn default() -> Self {
        Self::Constant(0.0)
    }
}

impl ReferenceSource {
    pub const DEFAULT_LIVE_RANGE: f64 = 0.5;

    pub fn live(range: f64) -> Self {
        Self::Live { range, value: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant(v) => ensure(v.is_finite(), "reference finite"),
            Self::Schedule(steps) => {
                ensure(
                    steps.iter().all(|(t, v)| t.is_finite() && v.is_finite() && *t >= 0.0),
                    "schedule entries finite with t >= 0",
                )?;
                ensure(
                    steps.windows(2).all(|w| w[0].0 <= w[1].0),
                    "schedule times non-decreasing",
                )
            }
            Self::Live { range, value } => {
                ensure(range.is_finite() && *range > 0.0, "live range > 0")?;
                ensure(value.abs() <= *range, "live value within range")
            }
        }
    }
}

/// Reference position at time `t`. Before the first schedule breakpoint the
/// reference is 0.
pub fn reference_value(source: &ReferenceSource, t: f64) -> f64 {
    match source {
        ReferenceSource::Constant(v) => *v,
        ReferenceSource::Schedule(steps) => steps
            .iter()
            .take_while(|(at, _)| *at <= t)
            .last()
            .map_or(0.0, |(_, v)| *v),
        ReferenceSource::Live { value, .. } => *value,
    }
}

/// Complete description of one closed-loop episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub plant: PlantParams,
    pub geometry: SensorGeometry,
    pub noise: NoiseConfig,
    pub motor: MotorModel,
    pub estimator: DifferentiatorConfig,
    pub controller: ControllerChoice,
    pub initial: PlantState,
    /// `None` captures calibration from the first frame when the episode
    /// starts upright at rest, and uses the ideal upright calibration otherwise.
    pub calibration: Option<Calibration>,
    pub reference: ReferenceSource,
    pub duration: f64,
    pub tick: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            geometry: SensorGeometry::default(),
            noise: NoiseConfig::default(),
            motor: MotorModel::default(),
            estimator: DifferentiatorConfig::default(),
            controller: ControllerChoice::Pd(GainSet::default()),
            initial: PlantState::default(),
            calibration: None,
            reference: ReferenceSource::default(),
            duration: 10.0,
            tick: 1e-3,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.geometry.validate(&self.plant)?;
        self.noise.validate()?;
        self.motor.validate()?;
        self.estimator.validate()?;
        match &self.controller {
            ControllerChoice::Pd(g) => g.validate()?,
            ControllerChoice::StateFeedback(k) => k.validate()?,
            ControllerChoice::Lqr(w) => w.validate()?,
        }
        ensure(self.initial.is_finite(), "initial state finite")?;
        if let Some(cal) = &self.calibration {
            cal.validate()?;
        }
        self.reference.validate()?;
        ensure(self.duration.is_finite() && self.duration > 0.0, "duration > 0")?;
        ensure(self.tick.is_finite() && self.tick > 0.0, "tick > 0")
    }

    /// Number of ticks after t = 0; an episode records `tick_count() + 1` rows.
    pub fn tick_count(&self) -> u64 {
        (self.duration / self.tick + 1e-9).floor() as u64
    }
}

/// One recorded tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub state: PlantState,
    pub estimate: EstimatedState,
    /// Normalized command before the motor model.
    pub u: f64,
    /// Force on the base, N.
    pub force: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepResult {
    Running(TraceRow),
    /// Terminal row: the robot fell during this tick's observation; no command was issued.
    Fell(TraceRow),
}

impl StepResult {
    pub fn row(&self) -> &TraceRow {
        match self {
            Self::Running(row) | Self::Fell(row) => row,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ActiveController {
    Pd(GainSet),
    Feedback(StateGain),
}

/// Runtime state of an episode.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    controller: ActiveController,
    state: PlantState,
    estimator: Estimator,
    calibration: Calibration,
    backlash: BacklashState,
    rng: ChaCha8Rng,
    tick_index: u64,
    last_estimate: EstimatedState,
    fell_at: Option<u64>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let controller = match &scenario.controller {
            ControllerChoice::Pd(g) => ActiveController::Pd(*g),
            ControllerChoice::StateFeedback(k) => ActiveController::Feedback(*k),
            ControllerChoice::Lqr(w) => {
                let ss = plant::linearize(&scenario.plant)?;
                ActiveController::Feedback(lqr_gain(&ss, w)?.negated())
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let calibration = initial_calibration(&scenario, &mut rng)?;
        let estimator = Estimator::new(scenario.plant, scenario.geometry, scenario.estimator);
        Ok(Self {
            controller,
            state: scenario.initial,
            estimator,
            calibration,
            backlash: BacklashState::default(),
            rng,
            tick_index: 0,
            last_estimate: EstimatedState::default(),
            fell_at: None,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn tick_index(&self) -> u64 {
        self.tick_index
    }

    /// Time of the next tick to run.
    pub fn time(&self) -> f64 {
        self.tick_index as f64 * self.scenario.tick
    }

    pub fn has_fallen(&self) -> bool {
        self.fell_at.is_some()
    }

    pub fn is_finished(&self) -> bool {
        self.has_fallen() || self.tick_index > self.scenario.tick_count()
    }

    /// State-feedback gains in use (`U = k · x`), if the controller is not PD.
    pub fn feedback_gain(&self) -> Option<StateGain> {
        match self.controller {
            ActiveController::Feedback(k) => Some(k),
            ActiveController::Pd(_) => None,
        }
    }

    pub fn reference(&self) -> f64 {
        reference_value(&self.scenario.reference, self.time())
    }

    /// Latches a live reference, clamped to the live range. Non-live sources are
    /// switched to a live source with the default range.
    pub fn set_reference(&mut self, value: f64) -> f64 {
        let range = match self.scenario.reference {
            ReferenceSource::Live { range, .. } => range,
            _ => ReferenceSource::DEFAULT_LIVE_RANGE,
        };
        let value = if value.is_finite() {
            value.clamp(-range, range)
        } else {
            0.0
        };
        self.scenario.reference = ReferenceSource::Live { range, value };
        value
    }

    pub fn set_gains(&mut self, gains: GainSet) -> Result<()> {
        gains.validate()?;
        match self.controller {
            ActiveController::Pd(_) => {
                self.controller = ActiveController::Pd(gains);
                self.scenario.controller = ControllerChoice::Pd(gains);
                Ok(())
            }
            ActiveController::Feedback(_) => Err(Error::InvalidParameter {
                invariant: "set_gains requires the pd controller",
            }),
        }
    }

    /// Restarts the episode from the scenario's initial state. The current
    /// reference source (including a latched live value) and gains are kept.
    pub fn reset(&mut self) -> Result<()> {
        let fresh = Self::new(self.scenario.clone())?;
        *self = Self {
            controller: self.controller,
            ..fresh
        };
        Ok(())
    }

    fn frame(&mut self) -> Result<(SensorFrame, Calibration)> {
        let sc = &self.scenario;
        let cal = self.calibration;
        let frame = observe(&sc.plant, &sc.geometry, &cal, &self.state, &sc.noise, &mut self.rng)?;
        Ok((frame, cal))
    }

    /// Runs one tick and returns its trace row.
    pub fn step_once(&mut self) -> Result<StepResult> {
        if self.fell_at.is_some() {
            return Err(Error::FallenOver {
                theta: self.state.theta,
            });
        }
        let t = self.time();
        let reference = reference_value(&self.scenario.reference, t);

        let (frame, cal) = match self.frame() {
            Ok(ok) => ok,
            Err(Error::FallenOver { .. }) => {
                self.fell_at = Some(self.tick_index);
                return Ok(StepResult::Fell(TraceRow {
                    t,
                    state: self.state,
                    estimate: self.last_estimate,
                    u: 0.0,
                    force: 0.0,
                    reference,
                }));
            }
            Err(e) => return Err(e),
        };
        let est = self.estimator.estimate(&frame, &cal);
        let u = self.command(&est, reference);
        let (drive, backlash) = motor_apply(&self.scenario.motor, u, self.backlash, self.scenario.tick);
        self.backlash = backlash;
        // Positive commands roll the robot toward a positive-tilt lean, i.e. toward -p.
        let force = -drive;

        let row = TraceRow {
            t,
            state: self.state,
            estimate: est,
            u,
            force,
            reference,
        };
        self.state = plant::step(&self.scenario.plant, &self.state, force, self.scenario.tick)?;
        self.last_estimate = est;
        self.tick_index += 1;
        Ok(StepResult::Running(row))
    }

    fn command(&self, est: &EstimatedState, reference: f64) -> f64 {
        match &self.controller {
            ActiveController::Pd(gains) => pd_command(gains, est, reference),
            ActiveController::Feedback(k) => {
                let error = estimate_to_state(&self.scenario.geometry, est) - Vector4::new(reference, 0.0, 0.0, 0.0);
                -state_feedback(k, &error) / self.scenario.motor.f_max
            }
        }
    }
}

/// Full-state estimate `(p, theta, p_dot, theta_dot)` recovered from `(x, d, v, d')`
/// by inverting `d = 2 s tan(theta)`.
pub fn estimate_to_state(geom: &SensorGeometry, est: &EstimatedState) -> Vector4<f64> {
    let two_s = 2.0 * geom.long_offset;
    let theta = (est.d / two_s).atan();
    let cos = theta.cos();
    Vector4::new(est.x, theta, est.v, est.d_prime * cos * cos / two_s)
}

/// Pre-run calibration. An upright start at rest is calibrated like the
/// robot: by averaging [`CALIBRATION_SAMPLES`] sensor readings taken before the
/// episode. Other starts use the calibration of an ideal upright robot.
fn initial_calibration(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<Calibration> {
    if let Some(cal) = scenario.calibration {
        return Ok(cal);
    }
    let upright_at_rest = scenario.initial.theta == 0.0 && scenario.initial.theta_dot == 0.0;
    if !upright_at_rest {
        return Calibration::ideal(&scenario.plant, &scenario.geometry, scenario.initial.p);
    }
    let frames = (0..CALIBRATION_SAMPLES)
        .map(|_| {
            observe(
                &scenario.plant,
                &scenario.geometry,
                &Calibration::default(),
                &scenario.initial,
                &scenario.noise,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration::capture_mean(&frames).expect("at least one calibration sample"))
}

/// Aggregate figures for a finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    /// No fall, and over the final [`SETTLE_WINDOW`] seconds `|theta| < SETTLE_THETA`
    /// and `|p - reference| < SETTLE_POSITION`.
    pub settled: bool,
    pub max_abs_theta: f64,
    pub rms_position_error: f64,
    /// Time of the terminal row when the robot fell.
    pub fell_at: Option<f64>,
    pub rows: usize,
}

impl Summary {
    pub fn from_rows(rows: &[TraceRow], fell: bool) -> Self {
        let max_abs_theta = rows.iter().map(|r| r.state.theta.abs()).fold(0.0, f64::max);
        let rms_position_error = if rows.is_empty() {
            0.0
        } else {
            (rows.iter().map(|r| (r.state.p - r.reference).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
        };
        let fell_at = if fell { rows.last().map(|r| r.t) } else { None };
        let settled = !fell
            && rows.last().is_some_and(|last| {
                let from = last.t - SETTLE_WINDOW;
                rows.iter()
                    .filter(|r| r.t >= from)
                    .all(|r| r.state.theta.abs() < SETTLE_THETA && (r.state.p - r.reference).abs() < SETTLE_POSITION)
            });
        Self {
            settled,
            max_abs_theta,
            rms_position_error,
            fell_at,
            rows: rows.len(),
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "settled={} max_abs_theta={:.6} rms_position_error={:.6} rows={}",
            self.settled, self.max_abs_theta, self.rms_position_error, self.rows
        )?;
        match self.fell_at {
            Some(t) => write!(f, " outcome=fell t_fall={t:.3}"),
            None => write!(f, " outcome=completed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub rows: Vec<TraceRow>,
    pub fell: bool,
    pub summary: Summary,
}

/// Runs `scenario` for its full duration or until the robot falls.
pub fn run_episode(scenario: &Scenario) -> Result<Episode> {
    let mut sim = Simulation::new(scenario.clone())?;
    let ticks = scenario.tick_count();
    let mut rows = Vec::with_capacity(ticks as usize + 1);
    let mut fell = false;
    for _ in 0..=ticks {
        match sim.step_once()? {
            StepResult::Running(row) => rows.push(row),
            StepResult::Fell(row) => {
                rows.push(row);
                fell = true;
                break;
            }
        }
    }
    let summary = Summary::from_rows(&rows, fell);
    Ok(Episode { rows, fell, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sources() {
        assert_eq!(reference_value(&ReferenceSource::Constant(0.0), 12.3), 0.0);
        let sched = ReferenceSource::Schedule(vec![(0.0, 0.0), (2.0, 0.2)]);
        assert_eq!(reference_value(&sched, 1.999), 0.0);
        assert_eq!(reference_value(&sched, 2.0), 0.2);
        assert_eq!(reference_value(&sched, 50.0), 0.2);
        assert_eq!(reference_value(&ReferenceSource::live(0.5), 3.0), 0.0);
    }

    #[test]
    fn live_reference_clamps() {
        let scenario = Scenario {
            reference: ReferenceSource::live(0.5),
            ..Scenario::default()
        };
        let mut sim = Simulation::new(scenario).unwrap();
        assert_eq!(sim.set_reference(99.0), 0.5);
        assert_eq!(sim.reference(), 0.5);
        assert_eq!(sim.set_reference(-0.1), -0.1);
    }

    #[test]
    fn tick_count_has_no_float_drift() {
        let sc = Scenario {
            duration: 1.0,
            tick: 1e-3,
            ..Scenario::default()
        };
        assert_eq!(sc.tick_count(), 1000);
        let sc = Scenario {
            duration: 0.3,
            tick: 0.1,
            ..Scenario::default()
        };
        assert_eq!(sc.tick_count(), 3);
    }

    #[test]
    fn set_gains_rejected_for_state_feedback() {
        let sc = Scenario {
            controller: ControllerChoice::StateFeedback(StateGain::new([0.0; 4])),
            ..Scenario::default()
        };
        let mut sim = Simulation::new(sc).unwrap();
        assert!(sim.set_gains(GainSet::default()).is_err());
    }

    #[test]
    fn estimate_inversion_recovers_tilt() {
        let geom = SensorGeometry::default();
        let theta: f64 = 0.2;
        let est = EstimatedState {
            x: 0.1,
            v: 0.3,
            d: 2.0 * geom.long_offset * theta.tan(),
            d_prime: 2.0 * geom.long_offset * 0.5 / (theta.cos() * theta.cos()),
        };
        let x = estimate_to_state(&geom, &est);
        assert!((x[1] - theta).abs() < 1e-15);
        assert!((x[3] - 0.5).abs() < 1e-12);
        assert_eq!((x[0], x[2]), (0.1, 0.3));
    }
}
