//! Wizard-side service. Frame ingestion, control connections and the UI
//! server run as independent tasks; all of them go through one command
//! queue owned by the state actor.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ozforge_core::store::{MirrorStore, StoreError, DEFAULT_LIMIT};
use ozforge_core::wire::{
    decode_gaze_batch, encode_control, parse_datagram, ControlDecoder, ControlMessage, DatagramError, MsgType,
    ProtocolError, Reassembler, DEFAULT_CONTROL_PORT, DEFAULT_FRAME_PORT, DEFAULT_MAX_PENDING,
};
use socket2::{Domain, Protocol, Socket, Type};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;

mod http;
mod state;

pub use http::router;
pub use state::{
    FrameMeta, LatencySummary, LinkStats, PendingRequest, ReportEntry, SessionInfo, StreamEvent, WizardSnapshot,
    EVENT_TAIL,
};
use state::{ActionLog, Command, WizardState};

pub const DEFAULT_UI_PORT: u16 = 47080;
pub const ACTION_LOG_FILE: &str = "wizard.jsonl";
const HELLO_TIMEOUT: Duration = Duration::from_secs(5);
const LINK_REPORT_INTERVAL: Duration = Duration::from_millis(200);
const RECV_BUFFER: usize = 8 << 20;

#[derive(Debug, Error)]
pub enum WizardError {
    #[error("mirror failed to load:\n{0}")]
    Mirror(#[from] StoreError),
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind { what: &'static str, addr: SocketAddr, source: std::io::Error },
    #[error("no subject session is established")]
    NoSession,
    #[error("unknown message id `{0}`")]
    UnknownId(String),
    #[error("message `{0}` is not a general message")]
    NotGeneral(String),
    #[error("undo count must be at least 1")]
    BadUndo,
    #[error("wizard service has stopped")]
    Stopped,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct WizardConfig {
    pub mirror_dir: PathBuf,
    pub frame_addr: SocketAddr,
    pub control_addr: SocketAddr,
    pub ui_addr: SocketAddr,
    /// Where `wizard.jsonl` is written; `None` disables the action log.
    pub action_log: Option<PathBuf>,
    pub suggestion_limit: usize,
    pub max_pending: usize,
}

impl WizardConfig {
    pub fn new(mirror_dir: impl Into<PathBuf>) -> Self {
        let any = |port| SocketAddr::from(([0, 0, 0, 0], port));
        Self {
            mirror_dir: mirror_dir.into(),
            frame_addr: any(DEFAULT_FRAME_PORT),
            control_addr: any(DEFAULT_CONTROL_PORT),
            ui_addr: any(DEFAULT_UI_PORT),
            action_log: None,
            suggestion_limit: DEFAULT_LIMIT,
            max_pending: DEFAULT_MAX_PENDING,
        }
    }

    /// All listeners on 127.0.0.1 with OS-assigned ports.
    pub fn loopback(mirror_dir: impl Into<PathBuf>) -> Self {
        let lo = SocketAddr::from(([127, 0, 0, 1], 0));
        Self { frame_addr: lo, control_addr: lo, ui_addr: lo, ..Self::new(mirror_dir) }
    }
}

/// Cloneable access to a running service.
#[derive(Clone)]
pub struct WizardHandle {
    cmd: mpsc::Sender<Command>,
    stream: broadcast::Sender<StreamEvent>,
    tasks: Arc<std::sync::Mutex<Vec<JoinHandle<()>>>>,
    pub frame_addr: SocketAddr,
    pub control_addr: SocketAddr,
    pub ui_addr: SocketAddr,
}

impl std::fmt::Debug for WizardHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WizardHandle")
            .field("frame_addr", &self.frame_addr)
            .field("control_addr", &self.control_addr)
            .field("ui_addr", &self.ui_addr)
            .finish()
    }
}

impl WizardHandle {
    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, WizardError> {
        let (tx, rx) = oneshot::channel();
        self.cmd.send(make(tx)).await.map_err(|_| WizardError::Stopped)?;
        rx.await.map_err(|_| WizardError::Stopped)
    }

    pub async fn snapshot(&self) -> Result<WizardSnapshot, WizardError> {
        self.ask(|reply| Command::Snapshot { reply }).await
    }

    pub async fn latest_frame(&self) -> Result<Option<Arc<[u8]>>, WizardError> {
        self.ask(|reply| Command::LatestFrame { reply }).await
    }

    /// Per-request times from control-message receipt to suggestions pushed,
    /// in µs.
    pub async fn filter_latencies(&self) -> Result<Vec<u64>, WizardError> {
        self.ask(|reply| Command::Latencies { reply }).await
    }

    /// Sends `activate_message`; returns the command id.
    pub async fn activate(&self, id: &str) -> Result<u64, WizardError> {
        let id = id.to_string();
        self.ask(|reply| Command::Activate { id, reply }).await?
    }

    pub async fn send_general(&self, id: &str) -> Result<u64, WizardError> {
        let id = id.to_string();
        self.ask(|reply| Command::General { id, reply }).await?
    }

    pub async fn send_undo(&self, n: u32) -> Result<u64, WizardError> {
        self.ask(|reply| Command::Undo { n, reply }).await?
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.stream.subscribe()
    }

    /// Stops the listeners and the state actor.
    pub fn shutdown(&self) {
        for t in self.tasks.lock().unwrap().drain(..) {
            t.abort();
        }
    }
}

fn bind_udp(addr: SocketAddr) -> std::io::Result<std::net::UdpSocket> {
    let socket = Socket::new(Domain::for_address(addr), Type::DGRAM, Some(Protocol::UDP))?;
    if let Err(e) = socket.set_recv_buffer_size(RECV_BUFFER) {
        tracing::debug!(error = %e, "could not enlarge the frame socket buffer");
    }
    socket.bind(&addr.into())?;
    socket.set_nonblocking(true)?;
    Ok(socket.into())
}

/// Loads the mirror, binds every listener and spawns the service tasks on
/// the current runtime. A mirror problem aborts before anything is bound.
pub async fn serve(config: WizardConfig) -> Result<WizardHandle, WizardError> {
    let mirror = MirrorStore::load(&config.mirror_dir)?;
    let bind = |what, addr| move |source| WizardError::Bind { what, addr, source };
    let udp = UdpSocket::from_std(bind_udp(config.frame_addr).map_err(bind("frame port", config.frame_addr))?)?;
    let control = TcpListener::bind(config.control_addr).await.map_err(bind("control port", config.control_addr))?;
    let ui = TcpListener::bind(config.ui_addr).await.map_err(bind("ui port", config.ui_addr))?;
    let log = match &config.action_log {
        Some(path) => Some(ActionLog::create(path)?),
        None => None,
    };
    let (cmd_tx, cmd_rx) = mpsc::channel(1024);
    let (stream_tx, _) = broadcast::channel(1024);
    let handle = WizardHandle {
        cmd: cmd_tx.clone(),
        stream: stream_tx.clone(),
        tasks: Arc::default(),
        frame_addr: udp.local_addr()?,
        control_addr: control.local_addr()?,
        ui_addr: ui.local_addr()?,
    };
    tracing::info!(
        frames = %handle.frame_addr,
        control = %handle.control_addr,
        ui = %handle.ui_addr,
        messages = mirror.messages.len(),
        "wizard listening"
    );
    let actor = WizardState::new(mirror, config.suggestion_limit, log, stream_tx);
    let app = router(handle.clone());
    let tasks = vec![
        tokio::spawn(actor.run(cmd_rx)),
        tokio::spawn(ingest_frames(udp, cmd_tx.clone(), config.max_pending)),
        tokio::spawn(accept_control(control, cmd_tx)),
        tokio::spawn(async move {
            if let Err(e) = axum::serve(ui, app).await {
                tracing::error!(error = %e, "ui server stopped");
            }
        }),
    ];
    handle.tasks.lock().unwrap().extend(tasks);
    Ok(handle)
}

#[derive(Default)]
struct SessionFeeds {
    frames: Reassembler,
    gaze: Reassembler,
}

async fn ingest_frames(socket: UdpSocket, cmd: mpsc::Sender<Command>, max_pending: usize) {
    let mut buf = vec![0u8; 65_536];
    let mut feeds: HashMap<u32, SessionFeeds> = HashMap::new();
    let mut received = 0u64;
    let mut rejected = 0u64;
    let mut last_session: Option<u32> = None;
    let mut dirty = false;
    let mut tick = tokio::time::interval(LINK_REPORT_INTERVAL);
    loop {
        tokio::select! {
            r = socket.recv_from(&mut buf) => {
                let Ok((n, _from)) = r else { continue };
                received += 1;
                dirty = true;
                let chunk = match parse_datagram(&buf[..n]) {
                    Ok(c) => c,
                    Err(e) => {
                        rejected += 1;
                        if e == DatagramError::Crc {
                            if let Some(f) = last_session.and_then(|s| feeds.get_mut(&s)) {
                                f.frames.note_crc_failure();
                            }
                        }
                        continue;
                    }
                };
                let session_id = chunk.session_id;
                last_session = Some(session_id);
                let feed = feeds.entry(session_id).or_insert_with(|| SessionFeeds {
                    frames: Reassembler::new(max_pending),
                    gaze: Reassembler::new(max_pending),
                });
                let msg = match chunk.msg_type {
                    MsgType::FrameChunk => feed.frames.push(chunk).map(|frame| Command::Frame { session_id, frame }),
                    MsgType::GazeBatch => feed.gaze.push(chunk).and_then(|batch| {
                        decode_gaze_batch(&batch.bytes).map(|s| Command::Gaze { session_id, samples: s.len() as u64 })
                    }),
                    MsgType::AudioChunk => None,
                };
                if let Some(msg) = msg {
                    let link = Command::Link { session_id, stats: feed.frames.stats(), datagrams_received: received, datagrams_rejected: rejected };
                    if cmd.send(msg).await.is_err() || cmd.send(link).await.is_err() {
                        return;
                    }
                    dirty = false;
                }
            }
            _ = tick.tick() => {
                if let (true, Some(s)) = (dirty, last_session) {
                    let stats = feeds[&s].frames.stats();
                    if cmd.send(Command::Link { session_id: s, stats, datagrams_received: received, datagrams_rejected: rejected }).await.is_err() {
                        return;
                    }
                    dirty = false;
                }
            }
        }
    }
}

async fn accept_control(listener: TcpListener, cmd: mpsc::Sender<Command>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                tracing::debug!(%peer, "control connection");
                tokio::spawn(control_connection(stream, cmd.clone()));
            }
            Err(e) => tracing::warn!(error = %e, "control accept failed"),
        }
    }
}

/// Next complete message from the stream; `None` at end of stream or when
/// framing is lost. Malformed bodies are skipped.
async fn next_message(
    rd: &mut (impl AsyncReadExt + Unpin),
    decoder: &mut ControlDecoder,
    buf: &mut [u8],
) -> Option<ControlMessage> {
    loop {
        match decoder.next_message() {
            Ok(Some(m)) => return Some(m),
            Ok(None) => {}
            Err(ProtocolError::Malformed { message, .. }) => {
                tracing::warn!(%message, "skipping malformed control message");
                continue;
            }
            Err(e) => {
                tracing::warn!(error = %e, "control stream unusable");
                return None;
            }
        }
        match rd.read(buf).await {
            Ok(0) | Err(_) => return None,
            Ok(n) => decoder.feed(&buf[..n]),
        }
    }
}

async fn write_message(wr: &mut (impl AsyncWriteExt + Unpin), msg: &ControlMessage) -> std::io::Result<()> {
    let bytes = encode_control(msg).map_err(std::io::Error::other)?;
    wr.write_all(&bytes).await
}

async fn control_connection(stream: TcpStream, cmd: mpsc::Sender<Command>) {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let mut decoder = ControlDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    let hello = tokio::time::timeout(HELLO_TIMEOUT, next_message(&mut rd, &mut decoder, &mut buf)).await;
    let Ok(Some(ControlMessage::Hello { session_id, subject_label, .. })) = hello else {
        tracing::warn!("control connection closed: no hello");
        return;
    };
    let (writer_tx, mut writer_rx) = mpsc::unbounded_channel();
    let (reply_tx, reply_rx) = oneshot::channel();
    let open = Command::Open { session_id, subject_label: subject_label.clone(), writer: writer_tx, reply: reply_tx };
    if cmd.send(open).await.is_err() {
        return;
    }
    let token = match reply_rx.await {
        Ok(Ok(token)) => token,
        Ok(Err(reason)) => {
            tracing::info!(session_id, %reason, "refusing subject");
            let refuse = ControlMessage::Hello { session_id, subject_label, accepted: Some(false), reason: Some(reason) };
            let _ = write_message(&mut wr, &refuse).await;
            let _ = wr.shutdown().await;
            return;
        }
        Err(_) => return,
    };
    let accept = ControlMessage::Hello { session_id, subject_label, accepted: Some(true), reason: None };
    if write_message(&mut wr, &accept).await.is_err() {
        let _ = cmd.send(Command::Closed { token }).await;
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(msg) = writer_rx.recv().await {
            if let Err(e) = write_message(&mut wr, &msg).await {
                tracing::warn!(error = %e, "control write failed");
                break;
            }
        }
        let _ = wr.shutdown().await;
    });
    while let Some(msg) = next_message(&mut rd, &mut decoder, &mut buf).await {
        let received = Instant::now();
        if cmd.send(Command::Control { token, msg, received }).await.is_err() {
            break;
        }
    }
    let _ = cmd.send(Command::Closed { token }).await;
    writer.abort();
}

/// The service on its own runtime, driven from synchronous code.
pub struct BlockingWizard {
    runtime: tokio::runtime::Runtime,
    handle: WizardHandle,
}

impl std::fmt::Debug for BlockingWizard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("BlockingWizard").field(&self.handle).finish()
    }
}

impl BlockingWizard {
    pub fn start(config: WizardConfig) -> Result<Self, WizardError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("wizard")
            .enable_all()
            .build()?;
        let handle = runtime.block_on(serve(config))?;
        Ok(Self { runtime, handle })
    }

    pub fn handle(&self) -> &WizardHandle {
        &self.handle
    }

    pub fn runtime(&self) -> &tokio::runtime::Runtime {
        &self.runtime
    }

    pub fn snapshot(&self) -> Result<WizardSnapshot, WizardError> {
        self.runtime.block_on(self.handle.snapshot())
    }

    pub fn latest_frame(&self) -> Result<Option<Arc<[u8]>>, WizardError> {
        self.runtime.block_on(self.handle.latest_frame())
    }

    pub fn filter_latencies(&self) -> Result<Vec<u64>, WizardError> {
        self.runtime.block_on(self.handle.filter_latencies())
    }

    pub fn activate(&self, id: &str) -> Result<u64, WizardError> {
        self.runtime.block_on(self.handle.activate(id))
    }

    pub fn send_general(&self, id: &str) -> Result<u64, WizardError> {
        self.runtime.block_on(self.handle.send_general(id))
    }

    pub fn send_undo(&self, n: u32) -> Result<u64, WizardError> {
        self.runtime.block_on(self.handle.send_undo(n))
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.handle.subscribe()
    }

    /// Polls snapshots until `done` holds or `timeout` elapses, returning
    /// the last snapshot either way.
    pub fn wait_until(&self, timeout: Duration, done: impl Fn(&WizardSnapshot) -> bool) -> Result<WizardSnapshot, WizardError> {
        let deadline = Instant::now() + timeout;
        loop {
            let snap = self.snapshot()?;
            if done(&snap) || Instant::now() >= deadline {
                return Ok(snap);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn shutdown(self) {
        self.handle.shutdown();
        self.runtime.shutdown_timeout(Duration::from_secs(1));
    }
}
