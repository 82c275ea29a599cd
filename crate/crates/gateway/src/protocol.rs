//! Wire types. Every message is one JSON envelope in one WebSocket text frame.

use std::time::{SystemTime, UNIX_EPOCH};

use ghostarm_core::capture::{ControllerCommand, HandSample, OverlayFeedback, SessionSnapshot};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Hello,
    HandSample,
    Command,
    StateSnapshot,
    Feedback,
    Error,
    Heartbeat,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Hello,
        Kind::HandSample,
        Kind::Command,
        Kind::StateSnapshot,
        Kind::Feedback,
        Kind::Error,
        Kind::Heartbeat,
    ];

    pub fn parse(name: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Hello => "Hello",
            Kind::HandSample => "HandSample",
            Kind::Command => "Command",
            Kind::StateSnapshot => "StateSnapshot",
            Kind::Feedback => "Feedback",
            Kind::Error => "Error",
            Kind::Heartbeat => "Heartbeat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub session_id: String,
    pub seq: u64,
    pub kind: Kind,
    /// Sender wall clock, seconds since the Unix epoch.
    pub timestamp: f64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(session_id: impl Into<String>, seq: u64, kind: Kind, payload: impl Serialize) -> Self {
        Self {
            session_id: session_id.into(),
            seq,
            kind,
            timestamp: now(),
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }
}

/// Envelope with the kind still unparsed, so unknown kinds can be answered.
#[derive(Debug, Clone, Deserialize)]
pub struct RawEnvelope {
    #[serde(default)]
    pub session_id: String,
    pub seq: u64,
    pub kind: String,
    #[serde(default)]
    pub timestamp: f64,
    #[serde(default)]
    pub payload: Value,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gravity: [f64; 3],
    pub forward: [f64; 3],
}

/// First client message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientHello {
    pub protocol_version: u32,
    /// Scene id; the server default when absent.
    #[serde(default)]
    pub scene: Option<String>,
    /// Headset gravity and forward vectors. Without it the tracking frame is
    /// taken as the world frame.
    #[serde(default)]
    pub calibration: Option<Calibration>,
    #[serde(default)]
    pub client: Option<String>,
}

/// Server reply to a valid hello.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerHello {
    pub protocol_version: u32,
    pub session_id: String,
    pub scene: String,
    pub scenes: Vec<String>,
    pub sample_rate: f64,
    pub heartbeat_interval_s: f64,
    pub idle_timeout_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandPayload {
    pub command: ControllerCommand,
}

pub type HandSamplePayload = HandSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedEpisode {
    pub episode_id: String,
    pub path: String,
    pub samples: usize,
}

/// Acknowledgment of one inbound message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub in_reply_to: u64,
    /// Inbound kind, or the command name for commands.
    pub ack: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<OverlayFeedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<SavedEpisode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    BadKind,
    BadPayload,
    HandshakeRequired,
    AlreadyGreeted,
    VersionMismatch,
    UnknownScene,
    WrongSession,
    SeqNotIncreasing,
    CaptureRejected,
    PersistFailed,
    IdleTimeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
}

pub type SnapshotPayload = SessionSnapshot;
