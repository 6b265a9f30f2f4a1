//! Wire protocol v1.
//!
//! Every message is one JSON object on one line (one WebSocket text frame),
//! carrying `"v": "v1"` and a `"type"` tag. Unknown fields are ignored.
//!
//! Client → server commands:
//!
//! | type             | fields                                      |
//! |------------------|---------------------------------------------|
//! | `claim_driver`   |                                             |
//! | `release_driver` | `token`                                     |
//! | `set_mode`       | `mode`: `track` \| `admittance` \| `insert` |
//! | `jog`            | `axis` 0..=5, `delta` (m or rad)            |
//! | `apply_wrench`   | `wrench` [6] (N, N·m), `duration` (s)       |
//! | `haptic_target`  | `x_h` (m)                                   |
//! | `set_gains`      | `gains`: any subset of the gain fields      |
//! | `pause`, `resume`, `reset` |                                   |
//! | `step`           | `ticks` (only while paused)                 |
//!
//! Every command except `claim_driver` must carry the driver `token`. An
//! optional integer `id` is echoed in the `ack` or `error` reply.
//!
//! Server → client: `welcome`, `driver`, `ack`, `error`, `state`,
//! `heartbeat`. Any server message may carry `dropped: n` when the
//! client's outbound queue overflowed and `n` older messages were discarded.

use std::fmt;

use insertion_core::control::GainSet;
use insertion_core::scenario::Mode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: &str = "v1";

pub const COMMAND_TYPES: [&str; 11] = [
    "claim_driver",
    "release_driver",
    "set_mode",
    "jog",
    "apply_wrench",
    "haptic_target",
    "set_gains",
    "pause",
    "resume",
    "reset",
    "step",
];

/// Subset of [`GainSet`]; absent fields keep their current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GainPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertion_kp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertion_kd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertion_ko: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_lambda: Option<f64>,
}

impl GainPatch {
    pub fn apply(&self, base: &GainSet) -> GainSet {
        GainSet {
            kp: self.kp.unwrap_or(base.kp),
            kd: self.kd.unwrap_or(base.kd),
            insertion_kp: self.insertion_kp.unwrap_or(base.insertion_kp),
            insertion_kd: self.insertion_kd.unwrap_or(base.insertion_kd),
            insertion_ko: self.insertion_ko.unwrap_or(base.insertion_ko),
            damping_lambda: self.damping_lambda.unwrap_or(base.damping_lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    ClaimDriver,
    ReleaseDriver,
    SetMode { mode: Mode },
    Jog { axis: usize, delta: f64 },
    ApplyWrench { wrench: [f64; 6], duration: f64 },
    HapticTarget { x_h: f64 },
    SetGains { gains: GainPatch },
    Pause,
    Resume,
    Reset,
    Step { ticks: u64 },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ClaimDriver => "claim_driver",
            Command::ReleaseDriver => "release_driver",
            Command::SetMode { .. } => "set_mode",
            Command::Jog { .. } => "jog",
            Command::ApplyWrench { .. } => "apply_wrench",
            Command::HapticTarget { .. } => "haptic_target",
            Command::SetGains { .. } => "set_gains",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Reset => "reset",
            Command::Step { .. } => "step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(flatten)]
    pub command: Command,
}

impl ClientMessage {
    pub fn new(command: Command) -> Self {
        Self {
            id: None,
            token: None,
            command,
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = Some(id);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMessage {
    pub xyz: [f64; 3],
    pub rotvec: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SaturationFlags {
    pub force: bool,
    pub speed: bool,
    pub spin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: f64,
    pub tick: u64,
    pub mode: Mode,
    pub paused: bool,
    pub pose: PoseMessage,
    pub desired: PoseMessage,
    pub task_error: [f64; 6],
    pub q: Vec<f64>,
    pub depth: f64,
    pub theta: f64,
    /// Tool axial velocity. Sent as `velocity` because `v` is the version key.
    #[serde(rename = "velocity")]
    pub v: f64,
    #[serde(rename = "F_t")]
    pub f_t: f64,
    pub haptic_target: f64,
    pub drive_force: f64,
    /// A layer punctured during the step that ended at `t`.
    pub puncture: bool,
    pub punctured_layers: Vec<bool>,
    pub saturation: SaturationFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_command: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        session: u64,
        scenario: String,
        dt: f64,
        driver_present: bool,
    },
    Driver {
        token: String,
    },
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        command: String,
        tick: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        code: ErrorCode,
        message: String,
    },
    State(StateMessage),
    Heartbeat {
        seq: u64,
        t: f64,
        wall_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Protocol,
    NotDriver,
    DriverTaken,
    Rejected,
    Simulation,
    Busy,
}

/// Server message plus the overflow marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(flatten)]
    pub message: ServerMessage,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropped: u64,
}

fn is_zero(n: &u64) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    NotJson(String),
    NotAnObject,
    MissingVersion,
    UnsupportedVersion(String),
    MissingType,
    UnknownType(String),
    InvalidFields { kind: String, reason: String },
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::NotJson(e) => write!(f, "message is not valid JSON: {e}"),
            ProtocolError::NotAnObject => write!(f, "message must be a JSON object"),
            ProtocolError::MissingVersion => write!(f, "missing version tag \"v\""),
            ProtocolError::UnsupportedVersion(v) => {
                write!(f, "unsupported protocol version '{v}', expected '{PROTOCOL_VERSION}'")
            }
            ProtocolError::MissingType => write!(f, "missing message \"type\""),
            ProtocolError::UnknownType(t) => write!(f, "unknown message type '{t}'"),
            ProtocolError::InvalidFields { kind, reason } => write!(f, "invalid '{kind}' message: {reason}"),
        }
    }
}

impl std::error::Error for ProtocolError {}

fn with_version(mut value: Value) -> String {
    if let Value::Object(map) = &mut value {
        debug_assert!(!map.contains_key("v"), "payload field collides with the version key");
        map.insert("v".into(), Value::String(PROTOCOL_VERSION.into()));
    }
    value.to_string()
}

/// Checks the envelope fields and returns the message type.
fn check_header(value: &Value) -> Result<String, ProtocolError> {
    let map = value.as_object().ok_or(ProtocolError::NotAnObject)?;
    match map.get("v") {
        None => return Err(ProtocolError::MissingVersion),
        Some(Value::String(v)) if v == PROTOCOL_VERSION => {}
        Some(other) => {
            let v = other.as_str().map(str::to_owned).unwrap_or_else(|| other.to_string());
            return Err(ProtocolError::UnsupportedVersion(v));
        }
    }
    match map.get("type") {
        Some(Value::String(t)) => Ok(t.clone()),
        Some(other) => Err(ProtocolError::UnknownType(other.to_string())),
        None => Err(ProtocolError::MissingType),
    }
}

fn parse(line: &str) -> Result<(Value, String), ProtocolError> {
    let value: Value = serde_json::from_str(line).map_err(|e| ProtocolError::NotJson(e.to_string()))?;
    let kind = check_header(&value)?;
    Ok((value, kind))
}

pub fn encode_command(msg: &ClientMessage) -> String {
    with_version(serde_json::to_value(msg).expect("commands always serialize"))
}

pub fn decode_command(line: &str) -> Result<ClientMessage, ProtocolError> {
    let (value, kind) = parse(line)?;
    if !COMMAND_TYPES.contains(&kind.as_str()) {
        return Err(ProtocolError::UnknownType(kind));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::InvalidFields {
        kind,
        reason: e.to_string(),
    })
}

pub fn encode_server(msg: &Envelope) -> String {
    with_version(serde_json::to_value(msg).expect("server messages always serialize"))
}

pub fn decode_server(line: &str) -> Result<Envelope, ProtocolError> {
    let (value, kind) = parse(line)?;
    serde_json::from_value(value).map_err(|e| match e.to_string() {
        r if r.starts_with("unknown variant") => ProtocolError::UnknownType(kind),
        reason => ProtocolError::InvalidFields { kind, reason },
    })
}
