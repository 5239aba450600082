//! Wire format shared by the live server and the cockpit.
//!
//! Messages are single-line JSON objects tagged by `"type"`.
//!
//! Outbound:
//! - `{"type":"state","t":..,"p":..,"theta":..,"p_dot":..,"theta_dot":..,"x_est":..,"v_est":..,"d":..,"d_prime":..,"u":..,"reference":..}`
//! - `{"type":"error","msg":".."}`
//!
//! Inbound:
//! - `{"type":"set_reference","value":0.1}`
//! - `{"type":"set_gains","k_err":..,"k_d":..,"k_dd":..,"k_v":..}`
//! - `{"type":"pause"}`, `{"type":"resume"}`, `{"type":"reset"}`
//!
//! State numbers are fixed-point with at most 6 decimals, trailing zeros
//! trimmed, so the zero frame encodes `"theta":0`.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::control::GainSet;
use crate::simloop::TraceRow;

pub const FIELD_NAMES: [&str; 11] = [
    "t",
    "p",
    "theta",
    "p_dot",
    "theta_dot",
    "x_est",
    "v_est",
    "d",
    "d_prime",
    "u",
    "reference",
];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TelemetryFrame {
    pub t: f64,
    pub p: f64,
    pub theta: f64,
    pub p_dot: f64,
    pub theta_dot: f64,
    pub x_est: f64,
    pub v_est: f64,
    pub d: f64,
    pub d_prime: f64,
    pub u: f64,
    pub reference: f64,
}

impl TelemetryFrame {
    fn values(&self) -> [f64; 11] {
        [
            self.t,
            self.p,
            self.theta,
            self.p_dot,
            self.theta_dot,
            self.x_est,
            self.v_est,
            self.d,
            self.d_prime,
            self.u,
            self.reference,
        ]
    }

    fn from_values(v: [f64; 11]) -> Self {
        Self {
            t: v[0],
            p: v[1],
            theta: v[2],
            p_dot: v[3],
            theta_dot: v[4],
            x_est: v[5],
            v_est: v[6],
            d: v[7],
            d_prime: v[8],
            u: v[9],
            reference: v[10],
        }
    }
}

impl From<&TraceRow> for TelemetryFrame {
    fn from(row: &TraceRow) -> Self {
        Self {
            t: row.t,
            p: row.state.p,
            theta: row.state.theta,
            p_dot: row.state.p_dot,
            theta_dot: row.state.theta_dot,
            x_est: row.estimate.x,
            v_est: row.estimate.v,
            d: row.estimate.d,
            d_prime: row.estimate.d_prime,
            u: row.u,
            reference: row.reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InboundCommand {
    SetReference(f64),
    SetGains(GainSet),
    Pause,
    Resume,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type `{0}`")]
    UnknownKind(String),
    #[error("field `{0}` missing or not a finite number")]
    BadField(&'static str),
}

/// Up to 6 decimals, trailing zeros trimmed; `-0` collapses to `0`.
fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return "null".to_owned();
    }
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "-0" | "" => "0".to_owned(),
        other => other.to_owned(),
    }
}

pub fn encode_frame(frame: &TelemetryFrame) -> String {
    let mut out = String::from(r#"{"type":"state""#);
    for (name, value) in FIELD_NAMES.iter().zip(frame.values()) {
        out.push_str(&format!(r#","{name}":{}"#, format_number(value)));
    }
    out.push('}');
    out
}

pub fn encode_error(msg: &str) -> String {
    serde_json::json!({ "type": "error", "msg": msg }).to_string()
}

fn parse_object(text: &str) -> Result<Map<String, Value>, ProtocolError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ProtocolError::Malformed("expected a JSON object".into())),
        Err(e) => Err(ProtocolError::Malformed(e.to_string())),
    }
}

fn number(map: &Map<String, Value>, key: &'static str) -> Result<f64, ProtocolError> {
    map.get(key)
        .and_then(Value::as_f64)
        .filter(|v| v.is_finite())
        .ok_or(ProtocolError::BadField(key))
}

fn kind(map: &Map<String, Value>) -> Result<&str, ProtocolError> {
    map.get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::Malformed("missing string field `type`".into()))
}

pub fn decode_frame(text: &str) -> Result<TelemetryFrame, ProtocolError> {
    let map = parse_object(text)?;
    match kind(&map)? {
        "state" => {
            let mut values = [0.0; 11];
            for (slot, name) in values.iter_mut().zip(FIELD_NAMES) {
                *slot = number(&map, name)?;
            }
            Ok(TelemetryFrame::from_values(values))
        }
        other => Err(ProtocolError::UnknownKind(other.to_owned())),
    }
}

/// Parses an inbound command; `set_reference` values are clamped to `±range`.
pub fn decode_command(text: &str, range: f64) -> Result<InboundCommand, ProtocolError> {
    let map = parse_object(text)?;
    match kind(&map)? {
        "set_reference" => Ok(InboundCommand::SetReference(
            number(&map, "value")?.clamp(-range, range),
        )),
        "set_gains" => Ok(InboundCommand::SetGains(GainSet {
            k_err: number(&map, "k_err")?,
            k_d: number(&map, "k_d")?,
            k_dd: number(&map, "k_dd")?,
            k_v: number(&map, "k_v")?,
        })),
        "pause" => Ok(InboundCommand::Pause),
        "resume" => Ok(InboundCommand::Resume),
        "reset" => Ok(InboundCommand::Reset),
        other => Err(ProtocolError::UnknownKind(other.to_owned())),
    }
}

pub fn encode_command(cmd: &InboundCommand) -> String {
    use serde_json::json;
    match cmd {
        InboundCommand::SetReference(v) => json!({ "type": "set_reference", "value": v }),
        InboundCommand::SetGains(g) => json!({
            "type": "set_gains", "k_err": g.k_err, "k_d": g.k_d, "k_dd": g.k_dd, "k_v": g.k_v
        }),
        InboundCommand::Pause => json!({ "type": "pause" }),
        InboundCommand::Resume => json!({ "type": "resume" }),
        InboundCommand::Reset => json!({ "type": "reset" }),
    }
    .to_string()
}
