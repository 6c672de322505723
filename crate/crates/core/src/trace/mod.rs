//! Session-log data model and its line-oriented on-disk encoding.
//!
//! A session directory holds `session.json` (the [`SessionMeta`]),
//! `events.jsonl` (one [`TraceRecord`] per line), `gaze.csv` and the
//! `frames/` and `audio/` blob directories.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

mod session;
mod validate;

pub use session::{open_session, SessionHandle};
pub use validate::{validate_session, validate_session_with, Issue, ValidationReport, Warning};

pub const SESSION_FILE: &str = "session.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const GAZE_FILE: &str = "gaze.csv";
pub const GAZE_HEADER: &str = "t_us,x,y,valid";
pub const FRAMES_DIR: &str = "frames";
pub const AUDIO_DIR: &str = "audio";

pub const MIN_AUTO_CAPTURE_PERIOD_MS: u32 = 50;

/// Microseconds since session start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_ms(ms: u64) -> Self {
        Timestamp(ms * 1_000)
    }

    pub fn as_us(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: Timestamp) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("directory not empty: {0}")]
    DirectoryNotEmpty(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("gaze sample out of order: t={t} after {last}")]
    GazeOutOfOrder { t: u64, last: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TraceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMeta {
    pub session_id: u32,
    pub subject_label: String,
    pub wall_clock_start: String,
    pub auto_capture_period_ms: u32,
    pub gaze_rate_hz: u32,
    #[serde(default)]
    pub config_snapshot: BTreeMap<String, String>,
}

impl SessionMeta {
    pub fn new(session_id: u32, subject_label: impl Into<String>) -> Self {
        Self {
            session_id,
            subject_label: subject_label.into(),
            wall_clock_start: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            auto_capture_period_ms: 500,
            gaze_rate_hz: 60,
            config_snapshot: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.auto_capture_period_ms < MIN_AUTO_CAPTURE_PERIOD_MS {
            return Err(TraceError::Invariant(format!(
                "auto_capture_period_ms {} below {MIN_AUTO_CAPTURE_PERIOD_MS} ms floor",
                self.auto_capture_period_ms
            )));
        }
        if !(1..=1000).contains(&self.gaze_rate_hz) {
            return Err(TraceError::Invariant(format!(
                "gaze_rate_hz {} outside [1, 1000]",
                self.gaze_rate_hz
            )));
        }
        if chrono::DateTime::parse_from_rfc3339(&self.wall_clock_start).is_err() {
            return Err(TraceError::Invariant(format!(
                "wall_clock_start `{}` is not ISO-8601",
                self.wall_clock_start
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    UserEvent,
    SystemEvent,
    AutoEvent,
    FrameRef,
    UtteranceRef,
    GazeRef,
    HelpRequest,
    MessageActivation,
    WizardCommand,
    PlaybackCue,
}

impl RecordKind {
    pub const ALL: [RecordKind; 10] = [
        RecordKind::UserEvent,
        RecordKind::SystemEvent,
        RecordKind::AutoEvent,
        RecordKind::FrameRef,
        RecordKind::UtteranceRef,
        RecordKind::GazeRef,
        RecordKind::HelpRequest,
        RecordKind::MessageActivation,
        RecordKind::WizardCommand,
        RecordKind::PlaybackCue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::UserEvent => "UserEvent",
            RecordKind::SystemEvent => "SystemEvent",
            RecordKind::AutoEvent => "AutoEvent",
            RecordKind::FrameRef => "FrameRef",
            RecordKind::UtteranceRef => "UtteranceRef",
            RecordKind::GazeRef => "GazeRef",
            RecordKind::HelpRequest => "HelpRequest",
            RecordKind::MessageActivation => "MessageActivation",
            RecordKind::WizardCommand => "WizardCommand",
            RecordKind::PlaybackCue => "PlaybackCue",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Kinds that trigger a screen capture.
    pub fn captures_frame(self) -> bool {
        matches!(
            self,
            RecordKind::UserEvent | RecordKind::SystemEvent | RecordKind::AutoEvent
        )
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserAction {
    MouseMove,
    MouseClick,
    KeyPress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEventPayload {
    pub action: UserAction,
    pub cursor_x: u32,
    pub cursor_y: u32,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemAction {
    WindowMoved,
    MenuOpened,
    DialogOpened,
    WindowClosed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemEventPayload {
    pub action: SystemAction,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoEventPayload {
    pub period_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRefPayload {
    pub frame_seq: u64,
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub byte_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRefPayload {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeRefPayload {
    pub file: String,
    pub rate_hz: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RequestType {
    Procedural,
    Functional,
    Explanation,
    Confirmation,
}

impl RequestType {
    pub const ALL: [RequestType; 4] = [
        RequestType::Procedural,
        RequestType::Functional,
        RequestType::Explanation,
        RequestType::Confirmation,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Lexicon,
    Widget,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelpRequestPayload {
    pub request_type: RequestType,
    pub object_kind: ObjectKind,
    pub object_id: String,
}

impl HelpRequestPayload {
    pub fn new(request_type: RequestType, object_kind: ObjectKind, object_id: impl Into<String>) -> Self {
        Self { request_type, object_kind, object_id: object_id.into() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.object_id.is_empty() {
            return Err(TraceError::Validation("object_id is empty".into()));
        }
        if self.object_kind == ObjectKind::Lexicon && self.object_id.split('/').any(str::is_empty) {
            return Err(TraceError::Validation(format!(
                "lexicon path `{}` has an empty segment",
                self.object_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageActivationPayload {
    pub message_id: String,
    pub general: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WizardCommandKind {
    Undo,
    GeneralMessage,
    Activate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WizardCommandPayload {
    pub command: WizardCommandKind,
    pub arg: String,
    /// Set when an undo asked for more steps than the action history holds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped_to: Option<u32>,
}

impl WizardCommandPayload {
    pub fn undo(n: u32) -> Self {
        Self { command: WizardCommandKind::Undo, arg: n.to_string(), clamped_to: None }
    }

    pub fn activate(id: impl Into<String>) -> Self {
        Self { command: WizardCommandKind::Activate, arg: id.into(), clamped_to: None }
    }

    pub fn general(id: impl Into<String>) -> Self {
        Self { command: WizardCommandKind::GeneralMessage, arg: id.into(), clamped_to: None }
    }

    pub fn undo_count(&self) -> Option<u32> {
        match self.command {
            WizardCommandKind::Undo => self.arg.parse().ok(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.command {
            WizardCommandKind::Undo => match self.arg.parse::<u32>() {
                Ok(n) if n >= 1 => Ok(()),
                _ => Err(TraceError::Validation(format!("undo count `{}` must be ≥ 1", self.arg))),
            },
            _ if self.arg.is_empty() => Err(TraceError::Validation("message id is empty".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Audio,
    Text,
    Animation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuePhase {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaybackCuePayload {
    pub message_id: String,
    pub cue_kind: CueKind,
    pub src: String,
    pub phase: CuePhase,
}

/// Kind-specific record body. The variant is the record's kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    UserEvent(UserEventPayload),
    SystemEvent(SystemEventPayload),
    AutoEvent(AutoEventPayload),
    FrameRef(FrameRefPayload),
    UtteranceRef(UtteranceRefPayload),
    GazeRef(GazeRefPayload),
    HelpRequest(HelpRequestPayload),
    MessageActivation(MessageActivationPayload),
    WizardCommand(WizardCommandPayload),
    PlaybackCue(PlaybackCuePayload),
}

impl Payload {
    pub fn kind(&self) -> RecordKind {
        match self {
            Payload::UserEvent(_) => RecordKind::UserEvent,
            Payload::SystemEvent(_) => RecordKind::SystemEvent,
            Payload::AutoEvent(_) => RecordKind::AutoEvent,
            Payload::FrameRef(_) => RecordKind::FrameRef,
            Payload::UtteranceRef(_) => RecordKind::UtteranceRef,
            Payload::GazeRef(_) => RecordKind::GazeRef,
            Payload::HelpRequest(_) => RecordKind::HelpRequest,
            Payload::MessageActivation(_) => RecordKind::MessageActivation,
            Payload::WizardCommand(_) => RecordKind::WizardCommand,
            Payload::PlaybackCue(_) => RecordKind::PlaybackCue,
        }
    }

    /// Checks the payload's own invariants. File existence is checked by
    /// [`validate_session`].
    pub fn validate(&self) -> Result<()> {
        match self {
            Payload::UserEvent(p) => {
                let is_move = p.action == UserAction::MouseMove;
                if is_move != p.detail.is_empty() {
                    return Err(TraceError::Validation(
                        "detail must be empty exactly for mouse_move".into(),
                    ));
                }
                Ok(())
            }
            Payload::SystemEvent(p) if p.target.is_empty() => {
                Err(TraceError::Validation("system event target is empty".into()))
            }
            Payload::AutoEvent(p) if p.period_ms < MIN_AUTO_CAPTURE_PERIOD_MS => Err(
                TraceError::Validation(format!("auto period {} ms below floor", p.period_ms)),
            ),
            Payload::FrameRef(p) if p.file != frame_file_name(p.frame_seq) => Err(
                TraceError::Validation(format!("frame file `{}` does not match frame_seq", p.file)),
            ),
            Payload::UtteranceRef(p) if !p.file.starts_with("audio/") => {
                Err(TraceError::Validation(format!("utterance file `{}` outside audio/", p.file)))
            }
            Payload::UtteranceRef(UtteranceRefPayload { duration_ms: Some(0), .. }) => {
                Err(TraceError::Validation("utterance duration must be positive".into()))
            }
            Payload::HelpRequest(p) => p.validate(),
            Payload::MessageActivation(p) if p.message_id.is_empty() => {
                Err(TraceError::Validation("message_id is empty".into()))
            }
            Payload::WizardCommand(p) => p.validate(),
            Payload::PlaybackCue(p) if p.message_id.is_empty() || p.src.is_empty() => {
                Err(TraceError::Validation("playback cue needs message_id and src".into()))
            }
            _ => Ok(()),
        }
    }

    fn to_value(&self) -> serde_json::Result<Value> {
        match self {
            Payload::UserEvent(p) => serde_json::to_value(p),
            Payload::SystemEvent(p) => serde_json::to_value(p),
            Payload::AutoEvent(p) => serde_json::to_value(p),
            Payload::FrameRef(p) => serde_json::to_value(p),
            Payload::UtteranceRef(p) => serde_json::to_value(p),
            Payload::GazeRef(p) => serde_json::to_value(p),
            Payload::HelpRequest(p) => serde_json::to_value(p),
            Payload::MessageActivation(p) => serde_json::to_value(p),
            Payload::WizardCommand(p) => serde_json::to_value(p),
            Payload::PlaybackCue(p) => serde_json::to_value(p),
        }
    }

    fn from_value(kind: RecordKind, v: Value) -> serde_json::Result<Self> {
        Ok(match kind {
            RecordKind::UserEvent => Payload::UserEvent(serde_json::from_value(v)?),
            RecordKind::SystemEvent => Payload::SystemEvent(serde_json::from_value(v)?),
            RecordKind::AutoEvent => Payload::AutoEvent(serde_json::from_value(v)?),
            RecordKind::FrameRef => Payload::FrameRef(serde_json::from_value(v)?),
            RecordKind::UtteranceRef => Payload::UtteranceRef(serde_json::from_value(v)?),
            RecordKind::GazeRef => Payload::GazeRef(serde_json::from_value(v)?),
            RecordKind::HelpRequest => Payload::HelpRequest(serde_json::from_value(v)?),
            RecordKind::MessageActivation => Payload::MessageActivation(serde_json::from_value(v)?),
            RecordKind::WizardCommand => Payload::WizardCommand(serde_json::from_value(v)?),
            RecordKind::PlaybackCue => Payload::PlaybackCue(serde_json::from_value(v)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub seq: u64,
    pub t: Timestamp,
    pub payload: Payload,
}

impl TraceRecord {
    pub fn kind(&self) -> RecordKind {
        self.payload.kind()
    }
}

impl Serialize for TraceRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::{Error, SerializeStruct};
        let payload = self.payload.to_value().map_err(S::Error::custom)?;
        let mut s = serializer.serialize_struct("TraceRecord", 4)?;
        s.serialize_field("seq", &self.seq)?;
        s.serialize_field("t_us", &self.t.0)?;
        s.serialize_field("kind", self.kind().as_str())?;
        s.serialize_field("payload", &payload)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for TraceRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let map = Map::deserialize(deserializer)?;
        record_from_map(map).map_err(D::Error::custom)
    }
}

pub fn frame_file_name(frame_seq: u64) -> String {
    format!("{FRAMES_DIR}/frame_{frame_seq:08}.jpg")
}

pub fn utterance_file_name(index: u32) -> String {
    format!("{AUDIO_DIR}/utt_{index:04}.wav")
}

/// Canonical single-line form: `{"seq":..,"t_us":..,"kind":..,"payload":{..}}`
/// without the trailing newline.
pub fn encode_record(record: &TraceRecord) -> String {
    // Serializing plain structs and maps to a String cannot fail.
    serde_json::to_string(record).expect("trace record serializes")
}

pub fn decode_record(line: &str) -> Result<TraceRecord> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let value: Value = serde_json::from_str(line).map_err(|e| TraceError::Parse {
        field: "<line>".into(),
        message: e.to_string(),
    })?;
    match value {
        Value::Object(map) => record_from_map(map),
        _ => Err(TraceError::Parse { field: "<line>".into(), message: "not a JSON object".into() }),
    }
}

fn record_from_map(mut map: Map<String, Value>) -> Result<TraceRecord> {
    fn parse_err(field: &str, message: impl Into<String>) -> TraceError {
        TraceError::Parse { field: field.into(), message: message.into() }
    }
    let take_u64 = |map: &mut Map<String, Value>, field: &str| -> Result<u64> {
        map.remove(field)
            .ok_or_else(|| parse_err(field, "missing"))?
            .as_u64()
            .ok_or_else(|| parse_err(field, "expected unsigned integer"))
    };
    let seq = take_u64(&mut map, "seq")?;
    let t_us = take_u64(&mut map, "t_us")?;
    let kind = match map.remove("kind") {
        Some(Value::String(s)) => {
            RecordKind::parse(&s).ok_or_else(|| parse_err("kind", format!("unknown kind `{s}`")))?
        }
        Some(_) => return Err(parse_err("kind", "expected string")),
        None => return Err(parse_err("kind", "missing")),
    };
    let payload = map.remove("payload").ok_or_else(|| parse_err("payload", "missing"))?;
    if let Some(extra) = map.keys().next() {
        return Err(parse_err(extra, "unexpected field"));
    }
    let payload =
        Payload::from_value(kind, payload).map_err(|e| parse_err("payload", e.to_string()))?;
    Ok(TraceRecord { seq, t: Timestamp(t_us), payload })
}
