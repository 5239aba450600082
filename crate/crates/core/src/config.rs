//! TOML scenario documents.
//!
//! Every section and key is optional; omitted values take the module
//! defaults. Unknown keys are rejected.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{GainSet, LqrWeights, MotorModel, StateGain};
use crate::error::Error;
use crate::estimation::DifferentiatorConfig;
use crate::plant::{PlantParams, PlantState};
use crate::sensors::{Calibration, NoiseConfig, SensorGeometry};
use crate::simloop::{ControllerChoice, ReferenceSource, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error{}: {message}", line_suffix(*line))]
    Parse { line: Option<usize>, message: String },

    #[error("unknown config key `{key}`{}", line_suffix(*line))]
    UnknownKey { line: Option<usize>, key: String },

    #[error("[{section}] out of range: {invariant} violated")]
    Range {
        section: &'static str,
        invariant: &'static str,
    },
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub base_mass: f64,
    pub bob_mass: f64,
    pub bob_inertia: f64,
    pub arm_length: f64,
    pub friction: f64,
    pub gravity: f64,
    pub wheel_radius: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self::from(PlantParams::default())
    }
}

impl From<PlantParams> for PlantSection {
    fn from(p: PlantParams) -> Self {
        Self {
            base_mass: p.base_mass,
            bob_mass: p.bob_mass,
            bob_inertia: p.bob_inertia,
            arm_length: p.arm_length,
            friction: p.friction,
            gravity: p.gravity,
            wheel_radius: p.wheel_radius,
        }
    }
}

impl From<PlantSection> for PlantParams {
    fn from(s: PlantSection) -> Self {
        Self {
            base_mass: s.base_mass,
            bob_mass: s.bob_mass,
            bob_inertia: s.bob_inertia,
            arm_length: s.arm_length,
            friction: s.friction,
            gravity: s.gravity,
            wheel_radius: s.wheel_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorsSection {
    pub long_offset: f64,
    pub drop: f64,
    pub ticks_per_rev: u32,
    pub adc_levels: u32,
    pub adc_range: f64,
    pub ir_noise_sigma: f64,
}

impl Default for SensorsSection {
    fn default() -> Self {
        Self::new(&SensorGeometry::default(), &NoiseConfig::default())
    }
}

impl SensorsSection {
    fn new(g: &SensorGeometry, n: &NoiseConfig) -> Self {
        Self {
            long_offset: g.long_offset,
            drop: g.drop,
            ticks_per_rev: g.ticks_per_rev,
            adc_levels: g.adc_levels,
            adc_range: g.adc_range,
            ir_noise_sigma: n.ir_sigma,
        }
    }

    fn geometry(&self) -> SensorGeometry {
        SensorGeometry {
            long_offset: self.long_offset,
            drop: self.drop,
            ticks_per_rev: self.ticks_per_rev,
            adc_levels: self.adc_levels,
            adc_range: self.adc_range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorSection {
    pub f_max: f64,
    pub deadband: f64,
    pub backlash_angle: f64,
    pub slack_rate: f64,
}

impl Default for MotorSection {
    fn default() -> Self {
        let m = MotorModel::default();
        Self {
            f_max: m.f_max,
            deadband: m.deadband,
            backlash_angle: m.backlash_angle,
            slack_rate: m.slack_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub alpha: f64,
    /// Differentiator sample time; follows `run.tick` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_d: Option<f64>,
    pub sign: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let d = DifferentiatorConfig::default();
        Self {
            alpha: d.alpha,
            t_d: None,
            sign: d.sign,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Pd,
    Sfb,
    Lqr,
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pd" => Ok(Self::Pd),
            "sfb" => Ok(Self::Sfb),
            "lqr" => Ok(Self::Lqr),
            other => Err(format!("unknown controller `{other}` (expected pd, sfb or lqr)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdSection {
    pub k_err: f64,
    pub k_d: f64,
    pub k_dd: f64,
    pub k_v: f64,
}

impl Default for PdSection {
    fn default() -> Self {
        let g = GainSet::default();
        Self {
            k_err: g.k_err,
            k_d: g.k_d,
            k_dd: g.k_dd,
            k_v: g.k_v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfbSection {
    /// Gains over `(p - reference, theta, p_dot, theta_dot)`; output is base force in N.
    pub k: [f64; 4],
}

impl Default for SfbSection {
    /// Negated default LQR design, rounded.
    fn default() -> Self {
        Self {
            k: [1.0, -36.5, 2.23, -6.56],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrSection {
    /// Row-major 4x4 state weight.
    pub q: [[f64; 4]; 4],
    pub r: f64,
}

impl Default for LqrSection {
    fn default() -> Self {
        let w = LqrWeights::default();
        let mut q = [[0.0; 4]; 4];
        for (i, row) in q.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = w.q[(i, j)];
            }
        }
        Self { q, r: w.r }
    }
}

impl LqrSection {
    pub fn weights(&self) -> LqrWeights {
        LqrWeights {
            q: Matrix4::from_fn(|i, j| self.q[i][j]),
            r: self.r,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    pub pd: PdSection,
    pub sfb: SfbSection,
    pub lqr: LqrSection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub p: f64,
    pub theta: f64,
    pub p_dot: f64,
    pub theta_dot: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub ir_bias: [f64; 4],
    pub enc_zero: [i64; 2],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    #[default]
    Constant,
    Schedule,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub kind: ReferenceKind,
    /// Used by `constant`.
    pub value: f64,
    /// `[time, value]` pairs used by `schedule`.
    pub steps: Vec<[f64; 2]>,
    /// Clamp range used by `live`.
    pub range: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::Constant,
            value: 0.0,
            steps: Vec::new(),
            range: ReferenceSource::DEFAULT_LIVE_RANGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub duration: f64,
    pub tick: f64,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            duration: s.duration,
            tick: s.tick,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    pub downsample: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            trace: None,
            downsample: 1,
        }
    }
}

/// An arbitrary linear system for `lqr` reports; matrices are row lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

impl CustomSystem {
    fn matrix(rows: &[Vec<f64>], name: &'static str) -> Result<DMatrix<f64>, ConfigError> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err(ConfigError::Range {
                section: "lqr_system",
                invariant: name,
            });
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    /// `(A, B, Q, R)` as dense matrices.
    pub fn matrices(&self) -> Result<[DMatrix<f64>; 4], ConfigError> {
        Ok([
            Self::matrix(&self.a, "A rectangular and non-empty")?,
            Self::matrix(&self.b, "B rectangular and non-empty")?,
            Self::matrix(&self.q, "Q rectangular and non-empty")?,
            Self::matrix(&self.r, "R rectangular and non-empty")?,
        ])
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDocument {
    pub plant: PlantSection,
    pub sensors: SensorsSection,
    pub motor: MotorSection,
    pub estimator: EstimatorSection,
    pub controller: ControllerSection,
    pub initial: InitialSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    pub reference: ReferenceSection,
    pub run: RunSection,
    pub output: OutputSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lqr_system: Option<CustomSystem>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn range(section: &'static str) -> impl Fn(Error) -> ConfigError {
    move |e| match e {
        Error::InvalidParameter { invariant } => ConfigError::Range { section, invariant },
        other => ConfigError::Parse {
            line: None,
            message: format!("[{section}] {other}"),
        },
    }
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            let message = e.message().to_owned();
            match message
                .strip_prefix("unknown field `")
                .and_then(|rest| rest.split('`').next())
            {
                Some(key) => ConfigError::UnknownKey {
                    line,
                    key: key.to_owned(),
                },
                None => ConfigError::Parse { line, message },
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config document always serializes")
    }

    /// Document describing `scenario` with the given output options.
    pub fn from_scenario(scenario: &Scenario, output: OutputSection) -> Self {
        let mut controller = ControllerSection::default();
        match &scenario.controller {
            ControllerChoice::Pd(g) => {
                controller.kind = ControllerKind::Pd;
                controller.pd = PdSection {
                    k_err: g.k_err,
                    k_d: g.k_d,
                    k_dd: g.k_dd,
                    k_v: g.k_v,
                };
            }
            ControllerChoice::StateFeedback(k) => {
                controller.kind = ControllerKind::Sfb;
                controller.sfb = SfbSection { k: k.k };
            }
            ControllerChoice::Lqr(w) => {
                controller.kind = ControllerKind::Lqr;
                controller.lqr = LqrSection {
                    q: std::array::from_fn(|i| std::array::from_fn(|j| w.q[(i, j)])),
                    r: w.r,
                };
            }
        }
        let reference = match &scenario.reference {
            ReferenceSource::Constant(v) => ReferenceSection {
                kind: ReferenceKind::Constant,
                value: *v,
                ..ReferenceSection::default()
            },
            ReferenceSource::Schedule(steps) => ReferenceSection {
                kind: ReferenceKind::Schedule,
                steps: steps.iter().map(|&(t, v)| [t, v]).collect(),
                ..ReferenceSection::default()
            },
            ReferenceSource::Live { range, .. } => ReferenceSection {
                kind: ReferenceKind::Live,
                range: *range,
                ..ReferenceSection::default()
            },
        };
        let m = scenario.motor;
        let s = scenario.initial;
        Self {
            plant: scenario.plant.into(),
            sensors: SensorsSection::new(&scenario.geometry, &scenario.noise),
            motor: MotorSection {
                f_max: m.f_max,
                deadband: m.deadband,
                backlash_angle: m.backlash_angle,
                slack_rate: m.slack_rate,
            },
            estimator: EstimatorSection {
                alpha: scenario.estimator.alpha,
                t_d: (scenario.estimator.t_d != scenario.tick).then_some(scenario.estimator.t_d),
                sign: scenario.estimator.sign,
            },
            controller,
            initial: InitialSection {
                p: s.p,
                theta: s.theta,
                p_dot: s.p_dot,
                theta_dot: s.theta_dot,
            },
            calibration: scenario.calibration.map(|c| CalibrationSection {
                ir_bias: c.ir_bias,
                enc_zero: c.enc_zero,
            }),
            reference,
            run: RunSection {
                duration: scenario.duration,
                tick: scenario.tick,
                seed: scenario.seed,
            },
            output,
            lqr_system: None,
        }
    }

    /// Builds and validates the scenario this document describes.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let plant = PlantParams::from(self.plant);
        plant.validate().map_err(range("plant"))?;

        let geometry = self.sensors.geometry();
        geometry.validate(&plant).map_err(range("sensors"))?;
        let noise = NoiseConfig {
            ir_sigma: self.sensors.ir_noise_sigma,
        };
        noise.validate().map_err(range("sensors"))?;

        let motor = MotorModel {
            f_max: self.motor.f_max,
            deadband: self.motor.deadband,
            backlash_angle: self.motor.backlash_angle,
            slack_rate: self.motor.slack_rate,
        };
        motor.validate().map_err(range("motor"))?;

        let estimator = DifferentiatorConfig {
            alpha: self.estimator.alpha,
            t_d: self.estimator.t_d.unwrap_or(self.run.tick),
            sign: self.estimator.sign,
        };
        estimator.validate().map_err(range("estimator"))?;

        let c = &self.controller;
        let controller = match c.kind {
            ControllerKind::Pd => {
                let g = GainSet {
                    k_err: c.pd.k_err,
                    k_d: c.pd.k_d,
                    k_dd: c.pd.k_dd,
                    k_v: c.pd.k_v,
                };
                g.validate().map_err(range("controller.pd"))?;
                ControllerChoice::Pd(g)
            }
            ControllerKind::Sfb => {
                let k = StateGain::new(c.sfb.k);
                k.validate().map_err(range("controller.sfb"))?;
                ControllerChoice::StateFeedback(k)
            }
            ControllerKind::Lqr => {
                let w = c.lqr.weights();
                w.validate().map_err(range("controller.lqr"))?;
                ControllerChoice::Lqr(w)
            }
        };

        let reference = match self.reference.kind {
            ReferenceKind::Constant => ReferenceSource::Constant(self.reference.value),
            ReferenceKind::Schedule => {
                ReferenceSource::Schedule(self.reference.steps.iter().map(|s| (s[0], s[1])).collect())
            }
            ReferenceKind::Live => ReferenceSource::live(self.reference.range),
        };
        reference.validate().map_err(range("reference"))?;

        let calibration = self.calibration.map(|c| Calibration {
            ir_bias: c.ir_bias,
            enc_zero: c.enc_zero,
        });
        if let Some(cal) = &calibration {
            cal.validate().map_err(range("calibration"))?;
        }

        let i = self.initial;
        let scenario = Scenario {
            plant,
            geometry,
            noise,
            motor,
            estimator,
            controller,
            initial: PlantState::new(i.p, i.theta, i.p_dot, i.theta_dot),
            calibration,
            reference,
            duration: self.run.duration,
            tick: self.run.tick,
            seed: self.run.seed,
        };
        if !scenario.initial.is_finite() {
            return Err(ConfigError::Range {
                section: "initial",
                invariant: "initial state finite",
            });
        }
        scenario.validate().map_err(range("run"))?;
        if self.output.downsample == 0 {
            return Err(ConfigError::Range {
                section: "output",
                invariant: "downsample >= 1",
            });
        }
        Ok(scenario)
    }
}

/// Parses and validates a scenario, filling defaults for omitted keys.
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    ConfigDocument::parse(text)?.to_scenario()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(parse_config("").unwrap(), Scenario::default());
    }

    #[test]
    fn negative_mass_cites_invariant() {
        let err = parse_config("[plant]\nbase_mass = -1.0\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Range {
                section: "plant",
                invariant: "M > 0"
            }
        );
        assert!(err.to_string().contains("M > 0"));
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config("[plant]\nbase_mass = 1.0\nmass_of_moon = 3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: Some(3),
                key: "mass_of_moon".into()
            }
        );
        let err = parse_config("[rocket]\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::UnknownKey { ref key, .. } if key == "rocket"),
            "{err}"
        );
    }

    #[test]
    fn syntax_error_has_line() {
        let err = parse_config("[run]\nduration = 1.0\ntick = = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: Some(3), .. }), "{err}");
    }

    #[test]
    fn zero_r_is_range_error() {
        let err = parse_config("[controller]\nkind = \"lqr\"\n[controller.lqr]\nr = 0.0\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Range {
                section: "controller.lqr",
                invariant: "R > 0"
            }
        );
    }

    #[test]
    fn estimator_period_follows_tick() {
        let sc = parse_config("[run]\ntick = 0.002\n").unwrap();
        assert_eq!(sc.estimator.t_d, 0.002);
        let sc = parse_config("[run]\ntick = 0.002\n[estimator]\nt_d = 0.001\n").unwrap();
        assert_eq!(sc.estimator.t_d, 0.001);
    }

    #[test]
    fn schedule_and_live_sources() {
        let sc = parse_config("[reference]\nkind = \"schedule\"\nsteps = [[0.0, 0.0], [2.0, 0.2]]\n").unwrap();
        assert_eq!(sc.reference, ReferenceSource::Schedule(vec![(0.0, 0.0), (2.0, 0.2)]));
        let sc = parse_config("[reference]\nkind = \"live\"\nrange = 0.3\n").unwrap();
        assert_eq!(sc.reference, ReferenceSource::live(0.3));
    }

    #[test]
    fn default_round_trip() {
        let doc = ConfigDocument::from_scenario(&Scenario::default(), OutputSection::default());
        assert_eq!(parse_config(&doc.to_toml()).unwrap(), Scenario::default());
    }
}
