use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{HelpRequestPayload, TraceRecord};

pub const MAX_CONTROL_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaybackStatus {
    Completed,
    UnknownId,
    Failed,
}

/// Messages of the lossless control channel. Encoded as JSON objects whose
/// `type` field names the variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMessage {
    /// Subject → wizard opens a session; the wizard answers with a hello
    /// carrying `accepted`.
    Hello {
        session_id: u32,
        subject_label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        accepted: Option<bool>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    HelpRequest {
        seq: u64,
        t_us: u64,
        request: HelpRequestPayload,
    },
    EventBatch {
        events: Vec<TraceRecord>,
    },
    ActivateMessage {
        command_id: u64,
        message_id: String,
    },
    GeneralMessage {
        command_id: u64,
        message_id: String,
    },
    Undo {
        command_id: u64,
        n: u32,
    },
    PlaybackReport {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command_id: Option<u64>,
        message_id: String,
        status: PlaybackStatus,
        cues: u32,
    },
    Heartbeat {
        t_us: u64,
    },
}

impl ControlMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ControlMessage::Hello { .. } => "hello",
            ControlMessage::HelpRequest { .. } => "help_request",
            ControlMessage::EventBatch { .. } => "event_batch",
            ControlMessage::ActivateMessage { .. } => "activate_message",
            ControlMessage::GeneralMessage { .. } => "general_message",
            ControlMessage::Undo { .. } => "undo",
            ControlMessage::PlaybackReport { .. } => "playback_report",
            ControlMessage::Heartbeat { .. } => "heartbeat",
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("declared length {0} exceeds {MAX_CONTROL_LEN}")]
    TooLong(usize),
    #[error("malformed control body: {message}")]
    Malformed { message: String, raw: Vec<u8> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `u32` big-endian length prefix followed by the UTF-8 JSON body.
pub fn encode_control(msg: &ControlMessage) -> Result<Vec<u8>, ProtocolError> {
    let body = serde_json::to_vec(msg).map_err(|e| ProtocolError::Malformed { message: e.to_string(), raw: Vec::new() })?;
    if body.len() > MAX_CONTROL_LEN {
        return Err(ProtocolError::TooLong(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Incremental decoder; bytes may arrive split at any boundary.
///
/// An oversized length prefix poisons the stream (framing is lost); a
/// malformed body is reported and skipped.
#[derive(Debug, Default)]
pub struct ControlDecoder {
    buf: Vec<u8>,
    start: usize,
    poisoned: Option<usize>,
}

impl ControlDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn next_message(&mut self) -> Result<Option<ControlMessage>, ProtocolError> {
        if let Some(len) = self.poisoned {
            return Err(ProtocolError::TooLong(len));
        }
        let avail = &self.buf[self.start..];
        if avail.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(avail[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_CONTROL_LEN {
            self.poisoned = Some(len);
            return Err(ProtocolError::TooLong(len));
        }
        if avail.len() < 4 + len {
            return Ok(None);
        }
        let body = &avail[4..4 + len];
        let parsed = serde_json::from_slice::<ControlMessage>(body);
        let raw = body.to_vec();
        self.start += 4 + len;
        if self.start > 64 * 1024 {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        parsed
            .map(Some)
            .map_err(|e| ProtocolError::Malformed { message: e.to_string(), raw })
    }

    /// Feeds `bytes` and returns every message now complete, in order.
    pub fn decode(&mut self, bytes: &[u8]) -> Result<Vec<ControlMessage>, ProtocolError> {
        self.feed(bytes);
        let mut out = Vec::new();
        while let Some(m) = self.next_message()? {
            out.push(m);
        }
        Ok(out)
    }
}

pub fn write_control(w: &mut impl Write, msg: &ControlMessage) -> Result<(), ProtocolError> {
    w.write_all(&encode_control(msg)?)?;
    Ok(())
}

/// Blocking read of one framed message; `Ok(None)` on clean end of stream.
pub fn read_control(r: &mut impl Read) -> Result<Option<ControlMessage>, ProtocolError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_CONTROL_LEN {
        return Err(ProtocolError::TooLong(len));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| ProtocolError::Malformed { message: e.to_string(), raw: body })
}
