//! Socket-independent handling of one client connection.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use ghostarm_core::capture::{CaptureConfig, CaptureSession, CommandOutcome};
use ghostarm_core::dataset::write_episode;
use ghostarm_core::kinematics::ArmModel;
use ghostarm_core::workspace::Scene;
use nalgebra::Vector3;
use serde::Serialize;

use crate::protocol::{
    ClientHello, CommandPayload, Envelope, ErrorCode, ErrorPayload, Feedback, HandSamplePayload, Kind, RawEnvelope,
    SavedEpisode, ServerHello, PROTOCOL_VERSION,
};

fn ack(in_reply_to: u64, ack: impl Into<String>) -> Feedback {
    Feedback {
        in_reply_to,
        ack: ack.into(),
        overlay: None,
        episode: None,
    }
}

/// Everything sessions share; read-only once the server starts.
#[derive(Debug)]
pub struct SharedConfig {
    /// Scenes by id; the first one is the default.
    pub scenes: BTreeMap<String, Arc<Scene>>,
    pub default_scene: String,
    pub model: ArmModel,
    pub capture: CaptureConfig,
    pub out_dir: PathBuf,
    pub heartbeat: Duration,
    pub idle_timeout: Duration,
}

impl SharedConfig {
    pub fn snapshot_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.capture.sample_rate)
    }
}

pub struct SessionHandler {
    shared: Arc<SharedConfig>,
    session_id: String,
    capture: Option<CaptureSession>,
    out_seq: u64,
    last_in_seq: Option<u64>,
    saved: Vec<SavedEpisode>,
}

impl SessionHandler {
    pub fn new(shared: Arc<SharedConfig>) -> Self {
        Self {
            shared,
            session_id: uuid::Uuid::new_v4().to_string(),
            capture: None,
            out_seq: 0,
            last_in_seq: None,
            saved: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn capture(&self) -> Option<&CaptureSession> {
        self.capture.as_ref()
    }

    /// Episodes persisted by this session so far.
    pub fn saved(&self) -> &[SavedEpisode] {
        &self.saved
    }

    fn envelope(&mut self, kind: Kind, payload: impl Serialize) -> Envelope {
        self.out_seq += 1;
        Envelope::new(self.session_id.clone(), self.out_seq, kind, payload)
    }

    fn error(&mut self, code: ErrorCode, message: impl Into<String>, in_reply_to: Option<u64>) -> Envelope {
        let payload = ErrorPayload {
            code,
            message: message.into(),
            in_reply_to,
        };
        self.envelope(Kind::Error, payload)
    }

    /// Error reply for a frame that could not be read at all.
    pub fn malformed(&mut self, message: impl Into<String>) -> Envelope {
        self.error(ErrorCode::Malformed, message, None)
    }

    /// Handles one inbound text frame; always exactly one reply.
    pub fn handle_text(&mut self, text: &str) -> Envelope {
        let raw: RawEnvelope = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => return self.error(ErrorCode::Malformed, e.to_string(), None),
        };
        let seq = raw.seq;
        if self.last_in_seq.is_some_and(|last| seq <= last) {
            let msg = format!("seq {seq} does not follow {}", self.last_in_seq.unwrap_or_default());
            return self.error(ErrorCode::SeqNotIncreasing, msg, Some(seq));
        }
        self.last_in_seq = Some(seq);
        let Some(kind) = Kind::parse(&raw.kind) else {
            return self.error(ErrorCode::BadKind, format!("unknown kind {:?}", raw.kind), Some(seq));
        };
        if self.capture.is_some() && raw.session_id != self.session_id {
            return self.error(
                ErrorCode::WrongSession,
                format!("session {:?} is not this session", raw.session_id),
                Some(seq),
            );
        }
        match kind {
            Kind::Hello => self.hello(seq, &raw),
            Kind::HandSample | Kind::Command | Kind::Heartbeat if self.capture.is_none() => {
                self.error(ErrorCode::HandshakeRequired, "send Hello first", Some(seq))
            }
            Kind::HandSample => self.hand_sample(seq, &raw),
            Kind::Command => self.command(seq, &raw),
            Kind::Heartbeat => {
                let fb = ack(seq, Kind::Heartbeat.name());
                self.envelope(Kind::Feedback, fb)
            }
            Kind::StateSnapshot | Kind::Feedback | Kind::Error => self.error(
                ErrorCode::BadKind,
                format!("{} is sent by the server only", kind.name()),
                Some(seq),
            ),
        }
    }

    fn hello(&mut self, seq: u64, raw: &RawEnvelope) -> Envelope {
        if self.capture.is_some() {
            return self.error(ErrorCode::AlreadyGreeted, "session already established", Some(seq));
        }
        let hello: ClientHello = match serde_json::from_value(raw.payload.clone()) {
            Ok(h) => h,
            Err(e) => return self.error(ErrorCode::BadPayload, e.to_string(), Some(seq)),
        };
        if hello.protocol_version != PROTOCOL_VERSION {
            let msg = format!(
                "server speaks protocol {PROTOCOL_VERSION}, client sent {}",
                hello.protocol_version
            );
            return self.error(ErrorCode::VersionMismatch, msg, Some(seq));
        }
        let scene_id = hello.scene.unwrap_or_else(|| self.shared.default_scene.clone());
        let Some(scene) = self.shared.scenes.get(&scene_id).cloned() else {
            return self.error(ErrorCode::UnknownScene, format!("no scene {scene_id:?}"), Some(seq));
        };
        let (model, config, id) = (
            self.shared.model.clone(),
            self.shared.capture.clone(),
            self.session_id.clone(),
        );
        let capture = match &hello.calibration {
            None => Ok(CaptureSession::calibrated(model, scene, config, id)),
            Some(c) => {
                let mut s = CaptureSession::new(model, scene, config, id);
                s.calibrate(Vector3::from(c.gravity), Vector3::from(c.forward))
                    .map(|_| s)
            }
        };
        let capture = match capture {
            Ok(c) => c,
            Err(e) => return self.error(ErrorCode::BadPayload, e.to_string(), Some(seq)),
        };
        self.capture = Some(capture);
        let reply = ServerHello {
            protocol_version: PROTOCOL_VERSION,
            session_id: self.session_id.clone(),
            scene: scene_id,
            scenes: self.shared.scenes.keys().cloned().collect(),
            sample_rate: self.shared.capture.sample_rate,
            heartbeat_interval_s: self.shared.heartbeat.as_secs_f64(),
            idle_timeout_s: self.shared.idle_timeout.as_secs_f64(),
        };
        self.envelope(Kind::Hello, reply)
    }

    fn hand_sample(&mut self, seq: u64, raw: &RawEnvelope) -> Envelope {
        let sample: HandSamplePayload = match serde_json::from_value(raw.payload.clone()) {
            Ok(s) => s,
            Err(e) => return self.error(ErrorCode::BadPayload, e.to_string(), Some(seq)),
        };
        let capture = self.capture.as_mut().expect("checked by caller");
        match capture.step(&sample) {
            Ok(overlay) => {
                let mut fb = ack(seq, Kind::HandSample.name());
                fb.overlay = Some(overlay);
                self.envelope(Kind::Feedback, fb)
            }
            Err(e) => self.error(ErrorCode::CaptureRejected, e.to_string(), Some(seq)),
        }
    }

    fn command(&mut self, seq: u64, raw: &RawEnvelope) -> Envelope {
        let CommandPayload { command } = match serde_json::from_value(raw.payload.clone()) {
            Ok(c) => c,
            Err(e) => return self.error(ErrorCode::BadPayload, e.to_string(), Some(seq)),
        };
        let capture = self.capture.as_mut().expect("checked by caller");
        let outcome = match capture.handle_command(command) {
            Ok(o) => o,
            Err(e) => return self.error(ErrorCode::CaptureRejected, e.to_string(), Some(seq)),
        };
        let mut fb = ack(seq, command.name());
        if let CommandOutcome::EpisodeFinalized(episode) = outcome {
            match write_episode(&episode, &self.shared.out_dir) {
                Ok(path) => {
                    tracing::info!(episode = %episode.episode_id, samples = episode.len(), "episode saved");
                    let saved = SavedEpisode {
                        episode_id: episode.episode_id.clone(),
                        path: path.display().to_string(),
                        samples: episode.len(),
                    };
                    self.saved.push(saved.clone());
                    fb.episode = Some(saved);
                }
                Err(e) => return self.error(ErrorCode::PersistFailed, e.to_string(), Some(seq)),
            }
        }
        self.envelope(Kind::Feedback, fb)
    }

    /// Current state, once the handshake is done.
    pub fn snapshot(&mut self) -> Option<Envelope> {
        let snapshot = self.capture.as_ref()?.snapshot();
        Some(self.envelope(Kind::StateSnapshot, snapshot))
    }

    pub fn heartbeat(&mut self) -> Envelope {
        self.envelope(Kind::Heartbeat, serde_json::json!({}))
    }

    pub fn idle_timeout(&mut self) -> Envelope {
        let msg = format!("no messages for {:.1} s", self.shared.idle_timeout.as_secs_f64());
        self.error(ErrorCode::IdleTimeout, msg, None)
    }
}
