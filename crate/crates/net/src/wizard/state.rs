use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ozforge_core::clock::{Clock, MonotonicClock};
use ozforge_core::store::{MirrorStore, Suggestion};
use ozforge_core::trace::{
    encode_record, HelpRequestPayload, Payload, Timestamp, TraceRecord, WizardCommandPayload,
};
use ozforge_core::wire::{CompleteFrame, ControlMessage, PlaybackStatus, ReassemblyStats};
use serde::Serialize;
use tokio::sync::{broadcast, mpsc, oneshot};

use super::WizardError;

pub const EVENT_TAIL: usize = 200;
const REPORT_TAIL: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionInfo {
    pub session_id: u32,
    pub subject_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameMeta {
    pub frame_seq: u32,
    pub t_us: u64,
    pub byte_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PendingRequest {
    pub seq: u64,
    pub t_us: u64,
    pub request: HelpRequestPayload,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportEntry {
    pub command_id: Option<u64>,
    pub message_id: String,
    pub status: PlaybackStatus,
    pub cues: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    pub crc_failures: u64,
    pub stale_discarded: u64,
    pub datagrams_received: u64,
    pub datagrams_rejected: u64,
    pub gaze_samples_received: u64,
    pub last_frame_age_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

impl LatencySummary {
    pub fn of(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let pick = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self { count: s.len(), p50_us: pick(0.50), p99_us: pick(0.99), max_us: s[s.len() - 1] }
    }
}

/// JSON snapshot served at `GET /state`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WizardSnapshot {
    pub session: Option<SessionInfo>,
    pub latest_frame: Option<FrameMeta>,
    pub event_tail: Vec<TraceRecord>,
    pub events_received: u64,
    pub event_order_violations: u64,
    pub pending_request: Option<PendingRequest>,
    pub requests_received: u64,
    pub request_order_violations: u64,
    pub link: LinkStats,
    pub commands_sent: u64,
    pub reports: Vec<ReportEntry>,
    pub filter_latency: LatencySummary,
}

/// Deltas pushed on `WS /stream`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Session { session: Option<SessionInfo> },
    FrameMeta(FrameMeta),
    Event { record: TraceRecord },
    Request { seq: u64, t_us: u64, request: HelpRequestPayload },
    Suggestions { seq: u64, suggestions: Vec<Suggestion> },
    Report(ReportEntry),
}

pub(crate) enum Command {
    Open {
        session_id: u32,
        subject_label: String,
        writer: mpsc::UnboundedSender<ControlMessage>,
        reply: oneshot::Sender<Result<u64, String>>,
    },
    Closed {
        token: u64,
    },
    Control {
        token: u64,
        msg: ControlMessage,
        received: Instant,
    },
    Frame {
        session_id: u32,
        frame: CompleteFrame,
    },
    Link {
        session_id: u32,
        stats: ReassemblyStats,
        datagrams_received: u64,
        datagrams_rejected: u64,
    },
    Gaze {
        session_id: u32,
        samples: u64,
    },
    Activate {
        id: String,
        reply: oneshot::Sender<Result<u64, WizardError>>,
    },
    General {
        id: String,
        reply: oneshot::Sender<Result<u64, WizardError>>,
    },
    Undo {
        n: u32,
        reply: oneshot::Sender<Result<u64, WizardError>>,
    },
    Snapshot {
        reply: oneshot::Sender<WizardSnapshot>,
    },
    LatestFrame {
        reply: oneshot::Sender<Option<Arc<[u8]>>>,
    },
    Latencies {
        reply: oneshot::Sender<Vec<u64>>,
    },
}

struct ActiveSession {
    token: u64,
    info: SessionInfo,
    writer: mpsc::UnboundedSender<ControlMessage>,
}

struct LatestFrame {
    meta: FrameMeta,
    bytes: Arc<[u8]>,
    received: Instant,
}

/// Append-only wizard action log in the session record grammar.
pub(crate) struct ActionLog {
    out: BufWriter<File>,
    clock: MonotonicClock,
    next_seq: u64,
    last_t: u64,
}

impl ActionLog {
    pub(crate) fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?), clock: MonotonicClock::new(), next_seq: 0, last_t: 0 })
    }

    fn append(&mut self, payload: Payload) {
        let t = self.clock.now_us().max(self.last_t);
        let record = TraceRecord { seq: self.next_seq, t: Timestamp(t), payload };
        self.next_seq += 1;
        self.last_t = t;
        let line = encode_record(&record);
        if let Err(e) = writeln!(self.out, "{line}").and_then(|()| self.out.flush()) {
            tracing::warn!(error = %e, "wizard action log write failed");
        }
    }
}

pub(crate) struct WizardState {
    mirror: MirrorStore,
    limit: usize,
    session: Option<ActiveSession>,
    next_token: u64,
    latest_frame: Option<LatestFrame>,
    event_tail: VecDeque<TraceRecord>,
    events_received: u64,
    last_event_seq: Option<u64>,
    event_order_violations: u64,
    pending_request: Option<PendingRequest>,
    requests_received: u64,
    last_request_seq: Option<u64>,
    request_order_violations: u64,
    link: LinkStats,
    commands_sent: u64,
    next_command_id: u64,
    reports: VecDeque<ReportEntry>,
    latencies_us: Vec<u64>,
    log: Option<ActionLog>,
    stream: broadcast::Sender<StreamEvent>,
}

impl WizardState {
    pub(crate) fn new(mirror: MirrorStore, limit: usize, log: Option<ActionLog>, stream: broadcast::Sender<StreamEvent>) -> Self {
        Self {
            mirror,
            limit,
            session: None,
            next_token: 1,
            latest_frame: None,
            event_tail: VecDeque::with_capacity(EVENT_TAIL),
            events_received: 0,
            last_event_seq: None,
            event_order_violations: 0,
            pending_request: None,
            requests_received: 0,
            last_request_seq: None,
            request_order_violations: 0,
            link: LinkStats::default(),
            commands_sent: 0,
            next_command_id: 1,
            reports: VecDeque::new(),
            latencies_us: Vec::new(),
            log,
            stream,
        }
    }

    fn push(&self, event: StreamEvent) {
        // no subscribers is fine
        let _ = self.stream.send(event);
    }

    fn current(&self, session_id: u32) -> bool {
        self.session.as_ref().is_some_and(|s| s.info.session_id == session_id)
    }

    fn is_token(&self, token: u64) -> bool {
        self.session.as_ref().is_some_and(|s| s.token == token)
    }

    pub(crate) async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            self.handle(cmd);
        }
    }

    pub(crate) fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Open { session_id, subject_label, writer, reply } => {
                if self.session.is_some() {
                    let _ = reply.send(Err("busy: a subject session is already established".into()));
                    return;
                }
                let token = self.next_token;
                self.next_token += 1;
                let info = SessionInfo { session_id, subject_label };
                self.reset_session_state();
                self.session = Some(ActiveSession { token, info: info.clone(), writer });
                tracing::info!(session_id, label = %info.subject_label, "subject session established");
                let _ = reply.send(Ok(token));
                self.push(StreamEvent::Session { session: Some(info) });
            }
            Command::Closed { token } => {
                if self.is_token(token) {
                    tracing::info!("subject session closed");
                    self.session = None;
                    self.push(StreamEvent::Session { session: None });
                }
            }
            Command::Control { token, msg, received } => {
                if self.is_token(token) {
                    self.on_control(msg, received);
                }
            }
            Command::Frame { session_id, frame } => {
                if !self.current(session_id) {
                    return;
                }
                let newer = self.latest_frame.as_ref().is_none_or(|f| frame.frame_seq > f.meta.frame_seq);
                if newer {
                    let meta = FrameMeta { frame_seq: frame.frame_seq, t_us: frame.t_us, byte_len: frame.bytes.len() };
                    self.latest_frame = Some(LatestFrame { meta: meta.clone(), bytes: frame.bytes.into(), received: Instant::now() });
                    self.push(StreamEvent::FrameMeta(meta));
                }
            }
            Command::Link { session_id, stats, datagrams_received, datagrams_rejected } => {
                if self.current(session_id) {
                    self.link.frames_delivered = stats.delivered;
                    self.link.frames_dropped = stats.dropped_incomplete;
                    self.link.crc_failures = stats.crc_failures;
                    self.link.stale_discarded = stats.stale_discarded;
                }
                self.link.datagrams_received = datagrams_received;
                self.link.datagrams_rejected = datagrams_rejected;
            }
            Command::Gaze { session_id, samples } => {
                if self.current(session_id) {
                    self.link.gaze_samples_received += samples;
                }
            }
            Command::Activate { id, reply } => {
                let _ = reply.send(self.activate(&id));
            }
            Command::General { id, reply } => {
                let _ = reply.send(self.send_general(&id));
            }
            Command::Undo { n, reply } => {
                let _ = reply.send(self.send_undo(n));
            }
            Command::Snapshot { reply } => {
                let _ = reply.send(self.snapshot());
            }
            Command::LatestFrame { reply } => {
                let _ = reply.send(self.latest_frame.as_ref().map(|f| f.bytes.clone()));
            }
            Command::Latencies { reply } => {
                let _ = reply.send(self.latencies_us.clone());
            }
        }
    }

    fn reset_session_state(&mut self) {
        self.latest_frame = None;
        self.event_tail.clear();
        self.events_received = 0;
        self.last_event_seq = None;
        self.event_order_violations = 0;
        self.pending_request = None;
        self.requests_received = 0;
        self.last_request_seq = None;
        self.request_order_violations = 0;
        self.link = LinkStats::default();
    }

    fn on_control(&mut self, msg: ControlMessage, received: Instant) {
        match msg {
            ControlMessage::EventBatch { events } => {
                for record in events {
                    if self.last_event_seq.is_some_and(|s| record.seq <= s) {
                        self.event_order_violations += 1;
                    }
                    self.last_event_seq = Some(record.seq);
                    self.events_received += 1;
                    if self.event_tail.len() == EVENT_TAIL {
                        self.event_tail.pop_front();
                    }
                    self.event_tail.push_back(record.clone());
                    self.push(StreamEvent::Event { record });
                }
            }
            ControlMessage::HelpRequest { seq, t_us, request } => {
                if self.last_request_seq.is_some_and(|s| seq <= s) {
                    self.request_order_violations += 1;
                }
                self.last_request_seq = Some(seq);
                self.requests_received += 1;
                if let Some(log) = &mut self.log {
                    log.append(Payload::HelpRequest(request.clone()));
                }
                let suggestions = self.mirror.filter(&request, self.limit);
                self.push(StreamEvent::Request { seq, t_us, request: request.clone() });
                self.push(StreamEvent::Suggestions { seq, suggestions: suggestions.clone() });
                self.pending_request = Some(PendingRequest { seq, t_us, request, suggestions });
                self.latencies_us.push(received.elapsed().as_micros() as u64);
            }
            ControlMessage::PlaybackReport { command_id, message_id, status, cues } => {
                let entry = ReportEntry { command_id, message_id, status, cues };
                if self.reports.len() == REPORT_TAIL {
                    self.reports.pop_front();
                }
                self.reports.push_back(entry.clone());
                self.push(StreamEvent::Report(entry));
            }
            ControlMessage::Heartbeat { .. } => {}
            other => tracing::warn!(kind = other.type_name(), "unexpected control message from subject"),
        }
    }

    fn send_command(&mut self, make: impl FnOnce(u64) -> ControlMessage, logged: WizardCommandPayload) -> Result<u64, WizardError> {
        let session = self.session.as_ref().ok_or(WizardError::NoSession)?;
        let command_id = self.next_command_id;
        session.writer.send(make(command_id)).map_err(|_| WizardError::NoSession)?;
        self.next_command_id += 1;
        self.commands_sent += 1;
        if let Some(log) = &mut self.log {
            log.append(Payload::WizardCommand(logged));
        }
        Ok(command_id)
    }

    fn activate(&mut self, id: &str) -> Result<u64, WizardError> {
        if self.session.is_none() {
            return Err(WizardError::NoSession);
        }
        if self.mirror.get(id).is_none() {
            return Err(WizardError::UnknownId(id.to_string()));
        }
        let message_id = id.to_string();
        let r = self.send_command(
            |command_id| ControlMessage::ActivateMessage { command_id, message_id },
            WizardCommandPayload::activate(id),
        )?;
        self.pending_request = None;
        Ok(r)
    }

    fn send_general(&mut self, id: &str) -> Result<u64, WizardError> {
        if self.session.is_none() {
            return Err(WizardError::NoSession);
        }
        match self.mirror.get(id) {
            None => return Err(WizardError::UnknownId(id.to_string())),
            Some(m) if !m.general => return Err(WizardError::NotGeneral(id.to_string())),
            Some(_) => {}
        }
        let message_id = id.to_string();
        self.send_command(
            |command_id| ControlMessage::GeneralMessage { command_id, message_id },
            WizardCommandPayload::general(id),
        )
    }

    fn send_undo(&mut self, n: u32) -> Result<u64, WizardError> {
        if n == 0 {
            return Err(WizardError::BadUndo);
        }
        self.send_command(|command_id| ControlMessage::Undo { command_id, n }, WizardCommandPayload::undo(n))
    }

    fn snapshot(&self) -> WizardSnapshot {
        let mut link = self.link;
        link.last_frame_age_ms = self.latest_frame.as_ref().map(|f| f.received.elapsed().as_millis() as u64);
        WizardSnapshot {
            session: self.session.as_ref().map(|s| s.info.clone()),
            latest_frame: self.latest_frame.as_ref().map(|f| f.meta.clone()),
            event_tail: self.event_tail.iter().cloned().collect(),
            events_received: self.events_received,
            event_order_violations: self.event_order_violations,
            pending_request: self.pending_request.clone(),
            requests_received: self.requests_received,
            request_order_violations: self.request_order_violations,
            link,
            commands_sent: self.commands_sent,
            reports: self.reports.iter().cloned().collect(),
            filter_latency: LatencySummary::of(&self.latencies_us),
        }
    }
}
