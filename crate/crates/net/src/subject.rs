//! Subject-side agent: records the session, streams frames and events to the
//! wizard, plays activated help messages and applies wizard commands to the
//! host application.

use std::collections::HashSet;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ozforge_core::frames::{image_dimensions, ScreenFrame};
use ozforge_core::gaze::GazeSample;
use ozforge_core::host::HostApp;
use ozforge_core::recorder::{self, EventReceipt, RecorderConfig, RecorderError, RecorderHandle, RecorderTap, SessionSummary};
use ozforge_core::store::{load_store, Store, StoreError};
use ozforge_core::trace::{
    CuePhase, FrameRefPayload, HelpRequestPayload, MessageActivationPayload, Payload, SessionMeta,
    Timestamp, TraceError, TraceRecord, UserEventPayload, WizardCommandPayload,
};
use ozforge_core::wire::{
    chunk_frame, chunk_message, encode_gaze_batch, read_control, write_control, ControlMessage, LossyChannel, MsgType,
    PlaybackStatus, ProtocolError, DEFAULT_MAX_DATAGRAM,
};
use serde::Serialize;
use thiserror::Error;

use crate::playback;

pub const DEFAULT_MAX_SEND_FPS: u32 = 10;
const GAZE_BATCH: usize = 30;
const MAX_EVENT_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("message store failed to load:\n{0}")]
    Store(#[from] StoreError),
    #[error("wizard unreachable at {addr}: {source}")]
    Unreachable { addr: SocketAddr, source: io::Error },
    #[error("wizard refused the session: {0}")]
    Refused(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where the wizard listens.
#[derive(Debug, Clone, Copy)]
pub struct WizardLink {
    pub control: SocketAddr,
    pub frames: SocketAddr,
    pub connect_timeout: Duration,
}

impl WizardLink {
    pub fn new(control: SocketAddr, frames: SocketAddr) -> Self {
        Self { control, frames, connect_timeout: Duration::from_secs(3) }
    }
}

pub struct SubjectConfig {
    pub store_dir: PathBuf,
    pub session_dir: PathBuf,
    pub meta: SessionMeta,
    pub recorder: RecorderConfig,
    /// `None` runs offline: the session is recorded and nothing is sent.
    pub link: Option<WizardLink>,
    pub host: Box<dyn HostApp>,
    pub forward_gaze: bool,
    pub max_send_fps: u32,
    /// Capacity of the queue in front of the datagram sender.
    pub send_queue: usize,
    pub max_datagram: usize,
    pub event_batch_window: Duration,
    /// Seeded datagram loss applied before sending, as `(p_loss, seed)`.
    pub simulated_loss: Option<(f64, u64)>,
}

impl SubjectConfig {
    pub fn new(store_dir: impl Into<PathBuf>, session_dir: impl Into<PathBuf>, recorder: RecorderConfig, host: Box<dyn HostApp>) -> Self {
        Self {
            store_dir: store_dir.into(),
            session_dir: session_dir.into(),
            meta: SessionMeta::new(1, "subject"),
            recorder,
            link: None,
            host,
            forward_gaze: false,
            max_send_fps: DEFAULT_MAX_SEND_FPS,
            send_queue: 16,
            max_datagram: DEFAULT_MAX_DATAGRAM,
            event_batch_window: Duration::from_millis(20),
            simulated_loss: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AgentStats {
    pub frames_sent: u64,
    /// Frames not sent because the send queue was full.
    pub frames_queue_dropped: u64,
    /// Frames not sent because of the send-rate cap.
    pub frames_rate_limited: u64,
    pub datagrams_sent: u64,
    /// Datagrams discarded by the simulated loss.
    pub datagrams_dropped: u64,
    pub gaze_batches_sent: u64,
    pub control_messages_sent: u64,
    pub events_forwarded: u64,
    pub playbacks_completed: u64,
    /// Wizard commands handled by the control reader.
    pub commands_applied: u64,
}

#[derive(Default)]
struct Counters {
    frames_sent: AtomicU64,
    frames_queue_dropped: AtomicU64,
    frames_rate_limited: AtomicU64,
    datagrams_sent: AtomicU64,
    datagrams_dropped: AtomicU64,
    gaze_batches_sent: AtomicU64,
    control_messages_sent: AtomicU64,
    events_forwarded: AtomicU64,
    playbacks_completed: AtomicU64,
    commands_applied: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl Counters {
    fn snapshot(&self) -> AgentStats {
        let g = |c: &AtomicU64| c.load(Ordering::Relaxed);
        AgentStats {
            frames_sent: g(&self.frames_sent),
            frames_queue_dropped: g(&self.frames_queue_dropped),
            frames_rate_limited: g(&self.frames_rate_limited),
            datagrams_sent: g(&self.datagrams_sent),
            datagrams_dropped: g(&self.datagrams_dropped),
            gaze_batches_sent: g(&self.gaze_batches_sent),
            control_messages_sent: g(&self.control_messages_sent),
            events_forwarded: g(&self.events_forwarded),
            playbacks_completed: g(&self.playbacks_completed),
            commands_applied: g(&self.commands_applied),
        }
    }
}

enum SendItem {
    Frame { seq: u32, t_us: u64, jpeg: Arc<[u8]> },
    /// A full gaze batch is waiting in the shared buffer.
    GazeReady,
    Shutdown,
}

enum Outgoing {
    Event(TraceRecord),
    Message(ControlMessage),
    Shutdown,
}

/// Feeds the network senders from inside the recorder lock, so everything
/// sent follows log order. Never blocks: frames go through a bounded queue
/// and are dropped when it is full.
struct AgentTap {
    datagrams: SyncSender<SendItem>,
    outbox: Mutex<Sender<Outgoing>>,
    /// Gaze samples to forward; `None` when forwarding is off.
    gaze: Option<Arc<Mutex<Vec<GazeSample>>>>,
    min_interval_us: u64,
    last_sent_us: Mutex<Option<u64>>,
    counters: Arc<Counters>,
}

impl RecorderTap for AgentTap {
    fn on_record(&self, record: &TraceRecord) {
        let msg = match &record.payload {
            Payload::UserEvent(_) | Payload::SystemEvent(_) | Payload::AutoEvent(_) => Outgoing::Event(record.clone()),
            Payload::HelpRequest(r) => Outgoing::Message(ControlMessage::HelpRequest {
                seq: record.seq,
                t_us: record.t.0,
                request: r.clone(),
            }),
            _ => return,
        };
        let _ = self.outbox.lock().unwrap().send(msg);
    }

    fn on_frame(&self, frame: &FrameRefPayload, t: Timestamp, data: &ScreenFrame) {
        {
            let mut last = self.last_sent_us.lock().unwrap();
            if last.is_some_and(|l| t.0.saturating_sub(l) < self.min_interval_us) {
                bump(&self.counters.frames_rate_limited);
                return;
            }
            *last = Some(t.0);
        }
        let item = SendItem::Frame { seq: frame.frame_seq as u32, t_us: t.0, jpeg: data.jpeg.clone() };
        match self.datagrams.try_send(item) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => bump(&self.counters.frames_queue_dropped),
            Err(TrySendError::Disconnected(_)) => {}
        }
    }

    fn on_gaze(&self, sample: &GazeSample) {
        if let Some(buf) = &self.gaze {
            let mut buf = buf.lock().unwrap();
            buf.push(*sample);
            if buf.len() == GAZE_BATCH {
                // if the queue is full the sender's idle flush picks it up
                let _ = self.datagrams.try_send(SendItem::GazeReady);
            }
        }
    }
}

struct PlaybackJob {
    command_id: Option<u64>,
    message_id: String,
}

#[derive(Default)]
struct Cancel {
    flag: Mutex<bool>,
    cv: Condvar,
}

impl Cancel {
    fn cancel(&self) {
        *self.flag.lock().unwrap() = true;
        self.cv.notify_all();
    }

    fn is_cancelled(&self) -> bool {
        *self.flag.lock().unwrap()
    }

    /// Sleeps until `deadline`; returns false when cancelled first.
    fn sleep_until(&self, deadline: Instant) -> bool {
        let mut flag = self.flag.lock().unwrap();
        loop {
            if *flag {
                return false;
            }
            let now = Instant::now();
            if now >= deadline {
                return true;
            }
            flag = self.cv.wait_timeout(flag, deadline - now).unwrap().0;
        }
    }
}

struct Shared {
    recorder: RecorderHandle,
    store: Arc<Store>,
    host: Mutex<Box<dyn HostApp>>,
    outbox: Option<Sender<Outgoing>>,
    counters: Arc<Counters>,
    cancel: Cancel,
}

impl Shared {
    fn send(&self, msg: ControlMessage) {
        if let Some(out) = &self.outbox {
            let _ = out.send(Outgoing::Message(msg));
        }
    }
}

/// A running subject agent.
pub struct SubjectAgent {
    shared: Arc<Shared>,
    datagrams: SyncSender<SendItem>,
    playback_tx: Option<Sender<PlaybackJob>>,
    stream: Option<TcpStream>,
    sender: Option<JoinHandle<()>>,
    writer: Option<JoinHandle<()>>,
    reader: Option<JoinHandle<()>>,
    player: Option<JoinHandle<()>>,
    online: bool,
    link_up: Arc<AtomicBool>,
}

impl std::fmt::Debug for SubjectAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubjectAgent").field("online", &self.online).finish()
    }
}

fn handshake(link: &WizardLink, meta: &SessionMeta) -> Result<TcpStream, AgentError> {
    let mut stream = TcpStream::connect_timeout(&link.control, link.connect_timeout)
        .map_err(|source| AgentError::Unreachable { addr: link.control, source })?;
    stream.set_nodelay(true)?;
    write_control(
        &mut stream,
        &ControlMessage::Hello {
            session_id: meta.session_id,
            subject_label: meta.subject_label.clone(),
            accepted: None,
            reason: None,
        },
    )?;
    stream.set_read_timeout(Some(link.connect_timeout))?;
    let reply = read_control(&mut stream)?;
    stream.set_read_timeout(None)?;
    match reply {
        Some(ControlMessage::Hello { accepted: Some(true), .. }) => Ok(stream),
        Some(ControlMessage::Hello { reason, .. }) => Err(AgentError::Refused(reason.unwrap_or_else(|| "refused".into()))),
        Some(other) => Err(AgentError::Refused(format!("unexpected {} before hello reply", other.type_name()))),
        None => Err(AgentError::Refused("connection closed during hello".into())),
    }
}

impl SubjectAgent {
    /// Loads the store, connects to the wizard (unless offline) and starts
    /// recording. A store problem aborts before any network activity.
    pub fn start(config: SubjectConfig) -> Result<Self, AgentError> {
        let store = Arc::new(load_store(&config.store_dir)?);
        let stream = match &config.link {
            Some(link) => Some(handshake(link, &config.meta)?),
            None => None,
        };
        let online = stream.is_some();
        let counters = Arc::new(Counters::default());
        let (dg_tx, dg_rx) = mpsc::sync_channel(config.send_queue.max(1));
        let (out_tx, out_rx) = mpsc::channel();
        let link_up = Arc::new(AtomicBool::new(online));

        let mut sender = None;
        let mut writer = None;
        let mut recorder_config = config.recorder;
        if let (Some(link), Some(stream)) = (&config.link, &stream) {
            let gaze = config.forward_gaze.then(Arc::default);
            let tap = AgentTap {
                datagrams: dg_tx.clone(),
                outbox: Mutex::new(out_tx.clone()),
                gaze: gaze.clone(),
                min_interval_us: 1_000_000 / u64::from(config.max_send_fps.max(1)),
                last_sent_us: Mutex::new(None),
                counters: counters.clone(),
            };
            recorder_config.tap = Some(Arc::new(tap));
            let bind: SocketAddr = if link.frames.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().unwrap();
            let socket = UdpSocket::bind(bind)?;
            let dest = link.frames;
            let session_id = config.meta.session_id;
            let max_datagram = config.max_datagram;
            let loss = config.simulated_loss.map(|(p, seed)| LossyChannel::new(p, 0.0, seed));
            let c = counters.clone();
            sender = Some(
                std::thread::Builder::new()
                    .name("agent-frames".into())
                    .spawn(move || {
                        FrameSender {
                            socket,
                            dest,
                            session_id,
                            max_datagram,
                            loss,
                            counters: &c,
                            gaze,
                            gaze_seq: 0,
                        }
                        .run(dg_rx)
                    })?,
            );
            let s = stream.try_clone()?;
            let c = counters.clone();
            let window = config.event_batch_window;
            let up = link_up.clone();
            writer = Some(
                std::thread::Builder::new()
                    .name("agent-control-out".into())
                    .spawn(move || ControlWriter { stream: s, counters: &c, link_up: &up, batch: Vec::new() }.run(out_rx, window))?,
            );
        }

        let recorder = recorder::start(recorder_config, &config.session_dir, config.meta)?;
        let shared = Arc::new(Shared {
            recorder,
            store,
            host: Mutex::new(config.host),
            outbox: online.then_some(out_tx),
            counters,
            cancel: Cancel::default(),
        });
        let (job_tx, job_rx) = mpsc::channel();
        let s = shared.clone();
        let player = std::thread::Builder::new()
            .name("agent-playback".into())
            .spawn(move || run_player(job_rx, &s))?;
        let reader = match &stream {
            Some(stream) => {
                let r = stream.try_clone()?;
                let s = shared.clone();
                let jobs = job_tx.clone();
                let up = link_up.clone();
                Some(std::thread::Builder::new().name("agent-control-in".into()).spawn(move || {
                    run_reader(r, &s, &jobs);
                    up.store(false, Ordering::SeqCst);
                })?)
            }
            None => None,
        };
        Ok(Self {
            shared,
            datagrams: dg_tx,
            playback_tx: Some(job_tx),
            stream,
            sender,
            writer,
            reader,
            player: Some(player),
            online,
            link_up,
        })
    }

    pub fn recorder(&self) -> &RecorderHandle {
        &self.shared.recorder
    }

    pub fn store(&self) -> &Store {
        &self.shared.store
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    /// False once the control connection has closed.
    pub fn link_up(&self) -> bool {
        self.link_up.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> AgentStats {
        self.shared.counters.snapshot()
    }

    pub fn host_state(&self) -> String {
        self.shared.host.lock().unwrap().current_state_id()
    }

    pub fn submit_event(&self, payload: Payload) -> Result<EventReceipt, AgentError> {
        Ok(self.shared.recorder.submit_event(payload)?)
    }

    /// Applies a host action and records it as a user event; both happen
    /// under the host lock so the log order is the application order.
    pub fn perform_action(&self, action: &str, event: UserEventPayload) -> Result<(EventReceipt, String), AgentError> {
        let mut host = self.shared.host.lock().unwrap();
        let receipt = self.shared.recorder.submit_event(Payload::UserEvent(event))?;
        let state = host.apply_action(action);
        Ok((receipt, state))
    }

    /// Logs the request and sends it to the wizard. A malformed request is
    /// neither logged nor sent.
    pub fn submit_help_request(&self, request: HelpRequestPayload) -> Result<TraceRecord, AgentError> {
        request.validate()?;
        Ok(self.shared.recorder.append(Payload::HelpRequest(request))?)
    }

    /// Plays a message locally, as if the wizard had activated it.
    pub fn activate_message(&self, message_id: &str) {
        if let Some(tx) = &self.playback_tx {
            let _ = tx.send(PlaybackJob { command_id: None, message_id: message_id.to_string() });
        }
    }

    /// Blocks until `n` playbacks have completed or `timeout` elapses.
    pub fn wait_playbacks(&self, n: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.shared.counters.playbacks_completed.load(Ordering::SeqCst) < n {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        true
    }

    /// Stops playback (closing any open cues), closes the session, flushes
    /// the network senders and disconnects.
    pub fn stop(mut self) -> Result<SessionSummary, AgentError> {
        self.shared.cancel.cancel();
        drop(self.playback_tx.take());
        // the reader holds a job sender; closing the read side ends it
        if let Some(s) = &self.stream {
            let _ = s.shutdown(Shutdown::Read);
        }
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
        if let Some(p) = self.player.take() {
            let _ = p.join();
        }
        let summary = self.shared.recorder.stop()?;
        let _ = self.datagrams.send(SendItem::Shutdown);
        if let Some(out) = &self.shared.outbox {
            let _ = out.send(Outgoing::Shutdown);
        }
        for t in [self.sender.take(), self.writer.take()].into_iter().flatten() {
            let _ = t.join();
        }
        if let Some(s) = &self.stream {
            let _ = s.shutdown(Shutdown::Both);
        }
        Ok(summary)
    }
}

struct FrameSender<'a> {
    socket: UdpSocket,
    dest: SocketAddr,
    session_id: u32,
    max_datagram: usize,
    loss: Option<LossyChannel>,
    counters: &'a Counters,
    gaze: Option<Arc<Mutex<Vec<GazeSample>>>>,
    gaze_seq: u32,
}

impl FrameSender<'_> {
    fn send(&mut self, datagrams: Vec<Vec<u8>>) {
        self.counters.datagrams_sent.fetch_add(datagrams.len() as u64, Ordering::Relaxed);
        let out = match &mut self.loss {
            Some(l) => {
                let before = l.stats().dropped;
                let out = l.transmit(datagrams);
                self.counters.datagrams_dropped.fetch_add(l.stats().dropped - before, Ordering::Relaxed);
                out
            }
            None => datagrams,
        };
        for d in out {
            if let Err(e) = self.socket.send_to(&d, self.dest) {
                tracing::debug!(error = %e, "datagram send failed");
            }
        }
    }

    fn frame(&mut self, seq: u32, t_us: u64, jpeg: &[u8]) {
        match chunk_frame(jpeg, self.session_id, seq, t_us, self.max_datagram) {
            Ok(d) => {
                self.send(d);
                bump(&self.counters.frames_sent);
            }
            Err(e) => tracing::warn!(error = %e, frame_seq = seq, "frame not sent"),
        }
    }

    fn flush_gaze(&mut self) {
        let samples = match &self.gaze {
            Some(buf) => std::mem::take(&mut *buf.lock().unwrap()),
            None => return,
        };
        for batch in samples.chunks(GAZE_BATCH) {
            let body = encode_gaze_batch(batch);
            let (seq, t_us) = (self.gaze_seq, batch[0].t.0);
            self.gaze_seq = self.gaze_seq.wrapping_add(1);
            if let Ok(d) = chunk_message(MsgType::GazeBatch, &body, self.session_id, seq, t_us, self.max_datagram) {
                self.send(d);
                bump(&self.counters.gaze_batches_sent);
            }
        }
    }

    fn run(mut self, rx: Receiver<SendItem>) {
        loop {
            match rx.recv_timeout(Duration::from_millis(100)) {
                Ok(SendItem::Frame { seq, t_us, jpeg }) => self.frame(seq, t_us, &jpeg),
                Ok(SendItem::GazeReady) | Err(RecvTimeoutError::Timeout) => self.flush_gaze(),
                Ok(SendItem::Shutdown) | Err(RecvTimeoutError::Disconnected) => {
                    self.flush_gaze();
                    break;
                }
            }
        }
    }
}

struct ControlWriter<'a> {
    stream: TcpStream,
    counters: &'a Counters,
    link_up: &'a AtomicBool,
    batch: Vec<TraceRecord>,
}

impl ControlWriter<'_> {
    fn write(&mut self, msg: &ControlMessage) {
        if !self.link_up.load(Ordering::SeqCst) {
            return;
        }
        match write_control(&mut self.stream, msg) {
            Ok(()) => bump(&self.counters.control_messages_sent),
            Err(e) => {
                tracing::warn!(error = %e, "control channel write failed");
                self.link_up.store(false, Ordering::SeqCst);
            }
        }
    }

    fn flush(&mut self) {
        if !self.batch.is_empty() {
            let events = std::mem::take(&mut self.batch);
            self.counters.events_forwarded.fetch_add(events.len() as u64, Ordering::Relaxed);
            self.write(&ControlMessage::EventBatch { events });
        }
    }

    /// Events are batched for at most `window`; any other message flushes
    /// the pending batch first so the wizard sees log order.
    fn run(mut self, rx: Receiver<Outgoing>, window: Duration) {
        let mut deadline: Option<Instant> = None;
        loop {
            let item = match deadline {
                Some(d) => rx.recv_timeout(d.saturating_duration_since(Instant::now())),
                None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
            };
            match item {
                Ok(Outgoing::Event(r)) => {
                    self.batch.push(r);
                    deadline.get_or_insert_with(|| Instant::now() + window);
                    if self.batch.len() >= MAX_EVENT_BATCH {
                        self.flush();
                        deadline = None;
                    }
                }
                Ok(Outgoing::Message(m)) => {
                    self.flush();
                    deadline = None;
                    self.write(&m);
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.flush();
                    deadline = None;
                }
                Ok(Outgoing::Shutdown) | Err(RecvTimeoutError::Disconnected) => {
                    self.flush();
                    let _ = self.stream.shutdown(Shutdown::Write);
                    break;
                }
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                self.flush();
                deadline = None;
            }
        }
    }
}

fn run_reader(mut stream: TcpStream, shared: &Shared, jobs: &Sender<PlaybackJob>) {
    loop {
        match read_control(&mut stream) {
            Ok(Some(msg)) => handle_command(msg, shared, jobs),
            Ok(None) => break,
            Err(ProtocolError::Malformed { message, .. }) => {
                tracing::warn!(%message, "skipping malformed control message");
            }
            Err(e) => {
                tracing::debug!(error = %e, "control channel closed");
                break;
            }
        }
    }
}

fn handle_command(msg: ControlMessage, shared: &Shared, jobs: &Sender<PlaybackJob>) {
    let logged = match msg {
        ControlMessage::Undo { n: 0, .. } => {
            tracing::warn!("ignoring undo of zero actions");
            return;
        }
        ControlMessage::Undo { n, .. } => {
            let mut host = shared.host.lock().unwrap();
            let k = (n as usize).min(host.history_len()) as u32;
            host.undo(k as usize);
            let mut payload = WizardCommandPayload::undo(n);
            if k < n {
                payload.clamped_to = Some(k);
            }
            shared.recorder.append(Payload::WizardCommand(payload))
        }
        ControlMessage::ActivateMessage { command_id, message_id } => {
            let r = shared.recorder.append(Payload::WizardCommand(WizardCommandPayload::activate(&message_id)));
            let _ = jobs.send(PlaybackJob { command_id: Some(command_id), message_id });
            r
        }
        ControlMessage::GeneralMessage { command_id, message_id } => {
            let r = shared.recorder.append(Payload::WizardCommand(WizardCommandPayload::general(&message_id)));
            let _ = jobs.send(PlaybackJob { command_id: Some(command_id), message_id });
            r
        }
        ControlMessage::Heartbeat { .. } => return,
        other => {
            tracing::warn!(kind = other.type_name(), "unexpected control message from wizard");
            return;
        }
    };
    if let Err(e) = logged {
        tracing::warn!(error = %e, "wizard command not logged");
    }
    shared.counters.commands_applied.fetch_add(1, Ordering::SeqCst);
}

fn run_player(jobs: Receiver<PlaybackJob>, shared: &Shared) {
    for job in jobs {
        if shared.cancel.is_cancelled() {
            break;
        }
        let (status, cues) = match play(&job.message_id, shared) {
            Ok(Some(cues)) => (PlaybackStatus::Completed, cues),
            Ok(None) => (PlaybackStatus::UnknownId, 0),
            Err(e) => {
                tracing::warn!(error = %e, message = %job.message_id, "playback failed");
                (PlaybackStatus::Failed, 0)
            }
        };
        shared.send(ControlMessage::PlaybackReport {
            command_id: job.command_id,
            message_id: job.message_id,
            status,
            cues,
        });
        shared.counters.playbacks_completed.fetch_add(1, Ordering::SeqCst);
    }
}

/// Plays one message in real time. `None` when the id is unknown.
fn play(message_id: &str, shared: &Shared) -> Result<Option<u32>, RecorderError> {
    let (Some(message), Some(schedule)) = (shared.store.get(message_id), playback::plan(&shared.store, message_id)) else {
        return Ok(None);
    };
    shared.recorder.append(Payload::MessageActivation(MessageActivationPayload {
        message_id: message_id.to_string(),
        general: message.summary.general,
    }))?;
    for a in &message.attachments {
        let path = shared.store.root().join(a);
        let shown = std::fs::read(&path).ok().and_then(|bytes| {
            let (width, height) = image_dimensions(&bytes)?;
            Some(ScreenFrame { jpeg: bytes.into(), width, height })
        });
        match shown {
            Some(frame) => {
                shared.recorder.record_frame(&frame)?;
            }
            None => tracing::warn!(path = %path.display(), "attachment is not a readable image"),
        }
    }
    let start = Instant::now();
    let mut started: HashSet<usize> = HashSet::new();
    let mut cancelled = false;
    for point in &schedule {
        if !cancelled {
            cancelled = !shared.cancel.sleep_until(start + Duration::from_millis(point.offset_ms));
        }
        // once cancelled, only the ends of already started cues are logged
        if cancelled && (point.cue.phase == CuePhase::Start || !started.contains(&point.index)) {
            continue;
        }
        shared.recorder.append(Payload::PlaybackCue(point.cue.clone()))?;
        if point.cue.phase == CuePhase::Start {
            started.insert(point.index);
        }
    }
    Ok(Some(started.len() as u32))
}
