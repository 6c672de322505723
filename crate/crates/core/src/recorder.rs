//! Multi-producer session recorder.
//!
//! All producers funnel into one lock-protected [`SessionHandle`]; sequence
//! numbers and timestamps are assigned under that lock, so the log order is
//! the serialization order. Each user, system or automatic event is followed
//! by the FrameRef of the screen captured for it.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, MonotonicClock};
use crate::frames::{FrameSource, ScreenFrame};
use crate::gaze::{parse_gaze_line, GazeError, GazeSample};
use crate::trace::{
    open_session, utterance_file_name, AutoEventPayload, FrameRefPayload, GazeRefPayload, Payload,
    RecordKind, SessionHandle, SessionMeta, Timestamp, TraceError, TraceRecord, UtteranceRefPayload,
    GAZE_FILE, MIN_AUTO_CAPTURE_PERIOD_MS,
};

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("recorder is stopped")]
    Stopped,
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub type Result<T, E = RecorderError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenBounds {
    pub width: u32,
    pub height: u32,
}

impl ScreenBounds {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }
}

/// Blocking pull-based gaze provider. `None` ends the stream.
pub trait GazeSource: Send {
    fn next_sample(&mut self) -> Option<Result<GazeSample, GazeError>>;
}

/// Reads `t_us,x,y,valid` lines from any buffered reader (file, socket,
/// serial bridge). A leading header line is skipped.
pub struct LineGazeSource<R> {
    reader: R,
    line: String,
    first: bool,
}

impl<R: BufRead + Send> LineGazeSource<R> {
    pub fn new(reader: R) -> Self {
        Self { reader, line: String::new(), first: true }
    }
}

impl<R: BufRead + Send> GazeSource for LineGazeSource<R> {
    fn next_sample(&mut self) -> Option<Result<GazeSample, GazeError>> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) | Err(_) => return None,
                Ok(_) => {}
            }
            let first = std::mem::replace(&mut self.first, false);
            let line = self.line.trim();
            if line.is_empty() || (first && line.starts_with("t_us")) {
                continue;
            }
            return Some(parse_gaze_line(line));
        }
    }
}

/// Adapts an in-memory sample iterator (synthetic trackers, tests).
pub struct IterGazeSource<I>(pub I);

impl<I: Iterator<Item = GazeSample> + Send> GazeSource for IterGazeSource<I> {
    fn next_sample(&mut self) -> Option<Result<GazeSample, GazeError>> {
        self.0.next().map(Ok)
    }
}

/// Observer invoked under the recorder lock, in log order. Implementations
/// must not block.
pub trait RecorderTap: Send + Sync {
    fn on_record(&self, _record: &TraceRecord) {}
    fn on_frame(&self, _frame: &FrameRefPayload, _t: Timestamp, _data: &ScreenFrame) {}
    fn on_gaze(&self, _sample: &GazeSample) {}
}

pub struct RecorderConfig {
    pub auto_capture_period_ms: u32,
    pub screen_bounds: ScreenBounds,
    pub frame_source: Box<dyn FrameSource>,
    pub gaze_source: Option<Box<dyn GazeSource>>,
    /// Interval of the background idle-capture ticker; `None` leaves
    /// [`RecorderHandle::tick_auto_capture`] to the caller.
    pub tick: Option<Duration>,
    pub clock: Arc<dyn Clock>,
    pub tap: Option<Arc<dyn RecorderTap>>,
}

impl RecorderConfig {
    pub fn new(frame_source: impl FrameSource + 'static) -> Self {
        Self {
            auto_capture_period_ms: 500,
            screen_bounds: ScreenBounds { width: 1024, height: 768 },
            frame_source: Box::new(frame_source),
            gaze_source: None,
            tick: Some(Duration::from_millis(10)),
            clock: Arc::new(MonotonicClock::new()),
            tap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.auto_capture_period_ms < MIN_AUTO_CAPTURE_PERIOD_MS {
            return Err(RecorderError::Config(format!(
                "auto_capture_period_ms {} below {MIN_AUTO_CAPTURE_PERIOD_MS}",
                self.auto_capture_period_ms
            )));
        }
        if self.screen_bounds.width == 0 || self.screen_bounds.height == 0 {
            return Err(RecorderError::Config("screen bounds must be positive".into()));
        }
        if self.tick.is_some_and(|t| t.is_zero() || t > Duration::from_millis(10)) {
            return Err(RecorderError::Config("tick must be in (0, 10 ms]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazeOutcome {
    Stored,
    Rejected,
}

/// Opaque ticket for an utterance whose audio has not arrived yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UtteranceToken(u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventReceipt {
    pub seq: u64,
    pub t: Timestamp,
    pub frame: FrameRefPayload,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub counts: BTreeMap<RecordKind, u64>,
    pub duration_us: u64,
    pub gaze_rows: u64,
    pub gaze_rejected: u64,
}

impl SessionSummary {
    pub fn count(&self, kind: RecordKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn total_records(&self) -> u64 {
        self.counts.values().sum()
    }
}

struct State {
    session: SessionHandle,
    frame_source: Box<dyn FrameSource>,
    running: bool,
    last_activity: Timestamp,
    counts: BTreeMap<RecordKind, u64>,
    gaze_rows: u64,
    gaze_rejected: u64,
    utterances: HashMap<UtteranceToken, TraceRecord>,
    next_token: u64,
}

struct Inner {
    state: Mutex<State>,
    period_us: u64,
    period_ms: u32,
    bounds: ScreenBounds,
    gaze_rate_hz: u32,
    tap: Option<Arc<dyn RecorderTap>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

/// Cloneable handle shared by all producers of one session.
#[derive(Clone)]
pub struct RecorderHandle {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for RecorderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecorderHandle").field("period_ms", &self.inner.period_ms).finish()
    }
}

/// Opens the session and starts the idle ticker and gaze reader (if any).
pub fn start(config: RecorderConfig, directory: impl AsRef<Path>, mut meta: SessionMeta) -> Result<RecorderHandle> {
    config.validate()?;
    meta.auto_capture_period_ms = config.auto_capture_period_ms;
    meta.config_snapshot
        .entry("screen_width".into())
        .or_insert_with(|| config.screen_bounds.width.to_string());
    meta.config_snapshot
        .entry("screen_height".into())
        .or_insert_with(|| config.screen_bounds.height.to_string());
    let gaze_rate_hz = meta.gaze_rate_hz;
    let session = open_session(directory, meta, config.clock.clone())?;
    let inner = Arc::new(Inner {
        state: Mutex::new(State {
            session,
            frame_source: config.frame_source,
            running: true,
            last_activity: Timestamp::ZERO,
            counts: BTreeMap::new(),
            gaze_rows: 0,
            gaze_rejected: 0,
            utterances: HashMap::new(),
            next_token: 0,
        }),
        period_us: u64::from(config.auto_capture_period_ms) * 1_000,
        period_ms: config.auto_capture_period_ms,
        bounds: config.screen_bounds,
        gaze_rate_hz,
        tap: config.tap,
        threads: Mutex::new(Vec::new()),
    });
    let handle = RecorderHandle { inner };
    if let Some(tick) = config.tick {
        let h = handle.clone();
        let t = std::thread::Builder::new()
            .name("recorder-idle".into())
            .spawn(move || loop {
                std::thread::sleep(tick);
                let now = match h.lock().ok() {
                    Some(s) => s.session.now(),
                    None => break,
                };
                if h.tick_auto_capture(now).is_err() {
                    break;
                }
            })
            .expect("spawn idle ticker");
        handle.inner.threads.lock().unwrap().push(t);
    }
    if let Some(mut source) = config.gaze_source {
        let h = handle.clone();
        // Detached: a blocking source read cannot be interrupted; the thread
        // exits on end of stream or on the first submit after stop.
        std::thread::Builder::new()
            .name("recorder-gaze".into())
            .spawn(move || {
                while let Some(sample) = source.next_sample() {
                    match sample {
                        Ok(s) => {
                            if matches!(h.submit_gaze(s), Err(RecorderError::Stopped)) {
                                break;
                            }
                        }
                        Err(e) => {
                            tracing::warn!(error = %e, "unparsable gaze line");
                            if h.count_gaze_reject().is_err() {
                                break;
                            }
                        }
                    }
                }
            })
            .expect("spawn gaze reader");
    }
    Ok(handle)
}

impl RecorderHandle {
    fn lock(&self) -> Result<MutexGuard<'_, State>> {
        let guard = self
            .inner
            .state
            .lock()
            .map_err(|_| RecorderError::Usage("recorder lock poisoned".into()))?;
        if guard.running {
            Ok(guard)
        } else {
            Err(RecorderError::Stopped)
        }
    }

    pub fn period_ms(&self) -> u32 {
        self.inner.period_ms
    }

    pub fn screen_bounds(&self) -> ScreenBounds {
        self.inner.bounds
    }

    pub fn now(&self) -> Result<Timestamp> {
        Ok(self.lock()?.session.now())
    }

    pub fn session_dir(&self) -> Result<std::path::PathBuf> {
        Ok(self.lock()?.session.dir().to_path_buf())
    }

    fn emit(&self, state: &mut State, t: Option<Timestamp>, payload: Payload) -> Result<TraceRecord> {
        let record = match t {
            Some(t) => state.session.append_at(t, payload)?,
            None => state.session.append(payload)?,
        };
        *state.counts.entry(record.kind()).or_default() += 1;
        if let Some(tap) = &self.inner.tap {
            tap.on_record(&record);
        }
        Ok(record)
    }

    fn emit_frame(&self, state: &mut State, frame: &ScreenFrame) -> Result<TraceRecord> {
        let payload = state.session.write_frame(&frame.jpeg, frame.width, frame.height)?;
        let record = self.emit(state, None, Payload::FrameRef(payload.clone()))?;
        if let Some(tap) = &self.inner.tap {
            tap.on_frame(&payload, record.t, frame);
        }
        Ok(record)
    }

    fn capture(&self, state: &mut State) -> Result<FrameRefPayload> {
        let t = state.session.now();
        let frame = state.frame_source.capture(t);
        let record = self.emit_frame(state, &frame)?;
        match record.payload {
            Payload::FrameRef(p) => Ok(p),
            _ => unreachable!("emit_frame appends a FrameRef"),
        }
    }

    /// Records a user or system event followed by its screen capture, and
    /// resets the idle timer.
    pub fn submit_event(&self, payload: Payload) -> Result<EventReceipt> {
        match &payload {
            Payload::UserEvent(p) => {
                if !self.inner.bounds.contains(p.cursor_x, p.cursor_y) {
                    return Err(RecorderError::Validation(format!(
                        "cursor ({}, {}) outside {}x{}",
                        p.cursor_x, p.cursor_y, self.inner.bounds.width, self.inner.bounds.height
                    )));
                }
            }
            Payload::SystemEvent(_) => {}
            other => {
                return Err(RecorderError::Usage(format!(
                    "submit_event takes UserEvent or SystemEvent, got {}",
                    other.kind()
                )))
            }
        }
        payload.validate()?;
        let mut state = self.lock()?;
        let record = self.emit(&mut state, None, payload)?;
        let frame = self.capture(&mut state)?;
        state.last_activity = record.t;
        Ok(EventReceipt { seq: record.seq, t: record.t, frame })
    }

    /// Emits an AutoEvent plus capture when the interaction has been idle
    /// for at least one period at `now`.
    pub fn tick_auto_capture(&self, now: Timestamp) -> Result<Option<TraceRecord>> {
        let mut state = self.lock()?;
        if now.saturating_sub(state.last_activity) < self.inner.period_us {
            return Ok(None);
        }
        let record = self.emit(
            &mut state,
            Some(now),
            Payload::AutoEvent(AutoEventPayload { period_ms: self.inner.period_ms }),
        )?;
        self.capture(&mut state)?;
        state.last_activity = record.t;
        Ok(Some(record))
    }

    pub fn submit_gaze(&self, sample: GazeSample) -> Result<GazeOutcome> {
        let mut state = self.lock()?;
        match state.session.append_gaze(&sample) {
            Ok(()) => {
                state.gaze_rows += 1;
                if state.gaze_rows == 1 {
                    let marker = Payload::GazeRef(GazeRefPayload {
                        file: GAZE_FILE.into(),
                        rate_hz: self.inner.gaze_rate_hz,
                    });
                    self.emit(&mut state, None, marker)?;
                }
                if let Some(tap) = &self.inner.tap {
                    tap.on_gaze(&sample);
                }
                Ok(GazeOutcome::Stored)
            }
            Err(TraceError::GazeOutOfOrder { .. }) => {
                state.gaze_rejected += 1;
                Ok(GazeOutcome::Rejected)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn count_gaze_reject(&self) -> Result<()> {
        self.lock()?.gaze_rejected += 1;
        Ok(())
    }

    pub fn gaze_rejected(&self) -> Result<u64> {
        Ok(self.lock()?.gaze_rejected)
    }

    /// Dates the start of an utterance. The UtteranceRef record is written
    /// now, so its timestamp is the acquisition start and stays in log
    /// order; the audio file follows in [`Self::end_utterance`].
    pub fn begin_utterance(&self) -> Result<UtteranceToken> {
        let mut state = self.lock()?;
        let token = UtteranceToken(state.next_token);
        state.next_token += 1;
        let file = utterance_file_name(token.0 as u32);
        let record = self.emit(&mut state, None, Payload::UtteranceRef(UtteranceRefPayload { file, duration_ms: None }))?;
        state.utterances.insert(token, record);
        Ok(token)
    }

    pub fn end_utterance(&self, token: UtteranceToken, wav: &[u8]) -> Result<TraceRecord> {
        let mut state = self.lock()?;
        let record = state
            .utterances
            .remove(&token)
            .ok_or_else(|| RecorderError::Usage("end_utterance without matching begin".into()))?;
        if let Payload::UtteranceRef(p) = &record.payload {
            std::fs::write(state.session.dir().join(&p.file), wav).map_err(TraceError::from)?;
        }
        Ok(record)
    }

    /// Appends a record that does not trigger a capture (help requests,
    /// activations, wizard commands, playback cues).
    pub fn append(&self, payload: Payload) -> Result<TraceRecord> {
        match payload.kind() {
            RecordKind::HelpRequest
            | RecordKind::MessageActivation
            | RecordKind::WizardCommand
            | RecordKind::PlaybackCue => {}
            k => return Err(RecorderError::Usage(format!("{k} records are produced by the recorder itself"))),
        }
        let mut state = self.lock()?;
        self.emit(&mut state, None, payload)
    }

    /// Records an externally supplied image (e.g. help-window content) as a
    /// FrameRef.
    pub fn record_frame(&self, frame: &ScreenFrame) -> Result<TraceRecord> {
        let mut state = self.lock()?;
        self.emit_frame(&mut state, frame)
    }

    /// Closes the session. Submissions already holding the lock complete
    /// first; later ones fail with [`RecorderError::Stopped`].
    pub fn stop(&self) -> Result<SessionSummary> {
        let summary = {
            let mut state = self.lock()?;
            state.running = false;
            let pending: Vec<TraceRecord> = state.utterances.drain().map(|(_, r)| r).collect();
            for record in pending {
                if let Payload::UtteranceRef(p) = &record.payload {
                    std::fs::write(state.session.dir().join(&p.file), b"").map_err(TraceError::from)?;
                }
            }
            let duration_us = state.session.last_t().0;
            state.session.close()?;
            SessionSummary {
                counts: state.counts.clone(),
                duration_us,
                gaze_rows: state.gaze_rows,
                gaze_rejected: state.gaze_rejected,
            }
        };
        let threads = std::mem::take(&mut *self.inner.threads.lock().unwrap());
        for t in threads {
            let _ = t.join();
        }
        Ok(summary)
    }
}
