//! JSON messages exchanged with viewers and trackers. Every message is an
//! object with a `type` field; see `PROTOCOL.md` at the repository root.

use motionsketch_core::io::StreamSample;
use motionsketch_core::jig::JigConfig;
use motionsketch_core::rig::{BindMode, DeviceId};
use motionsketch_core::trajectory::Axis;
use motionsketch_core::{Quat, Vec3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello(Hello),
    Snapshot(Snapshot),
    Sample(SampleMsg),
    Command(CommandMsg),
    Ack(Ack),
    Error(ErrorMsg),
}

impl WireMessage {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }
}

fn default_protocol() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(default = "default_protocol")]
    pub protocol: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_rate: Option<f64>,
}

/// A tracker reading; same fields as a stream CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMsg {
    pub t: f64,
    pub device: DeviceId,
    pub p: Vec3,
    #[serde(default)]
    pub q: Quat,
}

impl From<SampleMsg> for StreamSample {
    fn from(m: SampleMsg) -> Self {
        StreamSample {
            t: m.t,
            device: m.device,
            pos: m.p,
            quat: m.q,
        }
    }
}

impl From<&StreamSample> for SampleMsg {
    fn from(s: &StreamSample) -> Self {
        SampleMsg {
            t: s.t,
            device: s.device.clone(),
            p: s.pos,
            q: s.quat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMsg {
    pub seq: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Trajectory,
    Take,
}

/// A jig by preset name (`"weight"`, `"weight:default"`) or full config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JigSpec {
    Preset(String),
    Config(JigConfig),
}

fn default_speed() -> f64 {
    1.0
}

fn default_spacing() -> f64 {
    motionsketch_core::calibration::DEFAULT_CUBE_SPACING
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Bind {
        device: DeviceId,
        bone: String,
        #[serde(default)]
        mode: BindMode,
    },
    Unbind {
        device: DeviceId,
    },
    /// Puts a jig between `device` (and `partner`, for two-handed jigs) and
    /// the rig. `jig: null` removes it.
    SetJig {
        device: DeviceId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partner: Option<DeviceId>,
        #[serde(default)]
        jig: Option<JigSpec>,
    },
    RecordStart {
        kind: RecordKind,
        /// Traced device for trajectories; defaults to the first bound
        /// device, then the first device seen.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        device: Option<DeviceId>,
    },
    RecordStop {
        kind: RecordKind,
    },
    Replay {
        /// All trajectories when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ids: Option<Vec<u32>>,
        #[serde(default = "default_speed")]
        speed: f64,
    },
    /// Stops a running replay.
    Stop,
    Edit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ids: Option<Vec<u32>>,
        #[serde(flatten)]
        op: EditOp,
    },
    Layer {
        take: u32,
        #[serde(default)]
        offset: f64,
    },
    Calibrate {
        readings: [Vec3; 4],
        #[serde(default = "default_spacing")]
        t: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bind { .. } => "bind",
            Command::Unbind { .. } => "unbind",
            Command::SetJig { .. } => "set_jig",
            Command::RecordStart { .. } => "record_start",
            Command::RecordStop { .. } => "record_stop",
            Command::Replay { .. } => "replay",
            Command::Stop => "stop",
            Command::Edit { .. } => "edit",
            Command::Layer { .. } => "layer",
            Command::Calibrate { .. } => "calibrate",
        }
    }
}

/// Trajectory edits. Rotations are in radians about the trajectory centroid;
/// `taps` counts the 5° / ×1.1 increments of the editing buttons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Translate {
        delta: Vec3,
    },
    Rotate {
        axis: Axis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        angle: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        taps: Option<i32>,
    },
    Zoom {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        factor: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        taps: Option<i32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub cmd: String,
    #[serde(default)]
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMode,
    UnknownId,
    MalformedCommand,
    /// Well-formed but refused by the domain (too many devices, recording
    /// too short, degenerate calibration).
    Rejected,
    /// Raised during a tick, not tied to a command.
    Engine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    #[serde(default)]
    pub seq: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorMsg {
    pub fn new(seq: Option<u64>, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            seq,
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    RecordingTrajectory,
    RecordingTake,
    Replaying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneView {
    pub name: String,
    pub head: Vec3,
    pub tail: Vec3,
    pub q: Quat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingView {
    pub device: DeviceId,
    pub bone: String,
    pub mode: BindMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceView {
    pub device: DeviceId,
    pub p: Vec3,
    pub q: Quat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CursorView {
    pub id: u32,
    pub p: Vec3,
    /// Waypoint indices drawn opaque, at most five.
    pub visible: Vec<usize>,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JigView {
    pub kind: String,
    pub devices: Vec<DeviceId>,
    pub outputs: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub id: u32,
    pub points: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerView {
    pub take: u32,
    pub offset: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub clock: f64,
    pub mode: Mode,
    pub bones: Vec<BoneView>,
    pub bindings: Vec<BindingView>,
    pub devices: Vec<DeviceView>,
    pub cursors: Vec<CursorView>,
    pub jigs: Vec<JigView>,
    pub trajectories: Vec<TrajectoryView>,
    pub takes: Vec<u32>,
    pub timeline: Vec<LayerView>,
    pub calibrated: bool,
}

/// Parses one incoming text frame. Failures come back as a
/// `malformed_command` error echoing `seq` when it can be found.
pub fn parse_message(text: &str) -> Result<WireMessage, ErrorMsg> {
    match serde_json::from_str::<WireMessage>(text) {
        Ok(m) => Ok(m),
        Err(e) => {
            let seq = serde_json::from_str::<Value>(text)
                .ok()
                .and_then(|v| v.get("seq").and_then(Value::as_u64));
            Err(ErrorMsg::new(seq, ErrorCode::MalformedCommand, e.to_string()))
        }
    }
}
