//! Synchronized replay of a recorded session.
//!
//! A [`ReplayTimeline`] merges the log records, a frame index and the
//! fixations detected from `gaze.csv`. Rendering at a position is a pure
//! function of the timeline and that position.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::gaze::{detect_fixations, read_gaze_csv, Fixation, FixationParams};
use crate::trace::{
    decode_record, validate_session, Payload, RecordKind, SessionMeta, Timestamp, TraceError, TraceRecord,
    ValidationReport, EVENTS_FILE, GAZE_FILE, SESSION_FILE,
};

mod export;

pub use export::{export, export_frame_count, ExportIndexEntry, ExportSummary};

/// Width of the trailing window of event markers shown by [`ReplayTimeline::seek`].
pub const MARKER_WINDOW_US: u64 = 200_000;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("session is not valid:\n{0}")]
    Invalid(ValidationReport),
    #[error("bad fixation parameters: {0}")]
    Params(String),
    #[error("gaze.csv line {line}: {message}")]
    Gaze { line: usize, message: String },
    #[error("speed must be positive")]
    Speed,
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(String),
}

/// Ordering class of timeline entries sharing a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum EntrySource {
    Frame = 0,
    Event = 1,
    Fixation = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Entry {
    pub t: Timestamp,
    pub source: EntrySource,
    /// Index into the records, frame index or fixations.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameEntry {
    pub t: Timestamp,
    pub frame_seq: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActiveFixation {
    pub index: usize,
    pub cx: i32,
    pub cy: i32,
    pub start: Timestamp,
    pub duration_us: u64,
    pub elapsed_us: u64,
}

impl ActiveFixation {
    pub fn elapsed_fraction(&self) -> f64 {
        self.elapsed_us as f64 / self.duration_us as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Marker {
    pub seq: u64,
    pub t: Timestamp,
    pub kind: RecordKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderInstruction {
    pub t: Timestamp,
    pub frame: Option<FrameEntry>,
    pub cursor: Option<(u32, u32)>,
    pub fixations: Vec<ActiveFixation>,
    pub markers: Vec<Marker>,
}

#[derive(Debug, Clone)]
pub struct ReplayTimeline {
    dir: PathBuf,
    meta: SessionMeta,
    records: Vec<TraceRecord>,
    frames: Vec<FrameEntry>,
    fixations: Vec<Fixation>,
    entries: Vec<Entry>,
    // (t, x, y) of every UserEvent, in log order
    cursors: Vec<(Timestamp, u32, u32)>,
    markers: Vec<Marker>,
    t_max: Timestamp,
}

fn is_marker(kind: RecordKind) -> bool {
    !matches!(kind, RecordKind::FrameRef | RecordKind::GazeRef)
}

/// Loads a closed, valid session and precomputes its fixations.
pub fn load(directory: impl AsRef<Path>, params: &FixationParams) -> Result<ReplayTimeline, ReplayError> {
    let dir = directory.as_ref().to_path_buf();
    params.validate().map_err(ReplayError::Params)?;
    let report = validate_session(&dir)?;
    if !report.is_empty() {
        return Err(ReplayError::Invalid(report));
    }
    let meta: SessionMeta = serde_json::from_slice(&fs::read(dir.join(SESSION_FILE))?).map_err(TraceError::from)?;
    let records = fs::read_to_string(dir.join(EVENTS_FILE))?
        .lines()
        .map(decode_record)
        .collect::<Result<Vec<_>, _>>()?;
    let gaze = read_gaze_csv(std::io::BufReader::new(fs::File::open(dir.join(GAZE_FILE))?))
        .map_err(|(line, e)| ReplayError::Gaze { line, message: e.to_string() })?;
    let fixations = detect_fixations(&gaze, params).map_err(|e| ReplayError::Gaze { line: 0, message: e.to_string() })?;

    let mut frames = Vec::new();
    let mut cursors = Vec::new();
    let mut markers = Vec::new();
    let mut entries = Vec::with_capacity(records.len() * 2 + fixations.len());
    for (i, r) in records.iter().enumerate() {
        entries.push(Entry { t: r.t, source: EntrySource::Event, index: i });
        match &r.payload {
            Payload::FrameRef(p) => {
                entries.push(Entry { t: r.t, source: EntrySource::Frame, index: frames.len() });
                frames.push(FrameEntry { t: r.t, frame_seq: p.frame_seq, file: p.file.clone() });
            }
            Payload::UserEvent(p) => cursors.push((r.t, p.cursor_x, p.cursor_y)),
            _ => {}
        }
        if is_marker(r.kind()) {
            markers.push(Marker { seq: r.seq, t: r.t, kind: r.kind() });
        }
    }
    for (i, f) in fixations.iter().enumerate() {
        entries.push(Entry { t: f.start, source: EntrySource::Fixation, index: i });
    }
    entries.sort_by_key(|e| (e.t, e.source, e.index));
    let last_record = records.last().map_or(Timestamp::ZERO, |r| r.t);
    let last_gaze = gaze.last().map_or(Timestamp::ZERO, |s| s.t);
    Ok(ReplayTimeline {
        dir,
        meta,
        records,
        frames,
        fixations,
        entries,
        cursors,
        markers,
        t_max: last_record.max(last_gaze),
    })
}

/// `position + wall_dt × speed`, in microseconds.
pub fn advance(position: Timestamp, wall_dt_us: u64, speed: f64) -> Timestamp {
    Timestamp(position.0 + (wall_dt_us as f64 * speed).round() as u64)
}

impl ReplayTimeline {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn t_max(&self) -> Timestamp {
        self.t_max
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn frames(&self) -> &[FrameEntry] {
        &self.frames
    }

    pub fn fixations(&self) -> &[Fixation] {
        &self.fixations
    }

    pub fn clamp(&self, t: i64) -> Timestamp {
        Timestamp(t.clamp(0, self.t_max.0 as i64) as u64)
    }

    fn active(&self, index: usize, t: Timestamp) -> ActiveFixation {
        let f = &self.fixations[index];
        ActiveFixation {
            index,
            cx: f.cx,
            cy: f.cy,
            start: f.start,
            duration_us: f.duration_us,
            elapsed_us: t.0 - f.start.0,
        }
    }

    /// Renders position `t` by walking the merged timeline from the start.
    /// Markers are the events in `(since, t]`; without `since` the window is
    /// the trailing [`MARKER_WINDOW_US`].
    pub fn step(&self, t: i64, since: Option<Timestamp>) -> RenderInstruction {
        let t = self.clamp(t);
        let lo = since.map_or(t.0.saturating_sub(MARKER_WINDOW_US) as i128, |s| s.0 as i128);
        let lo = if since.is_none() && t.0 < MARKER_WINDOW_US { -1 } else { lo };
        let mut frame = None;
        let mut cursor = None;
        let mut fixations = Vec::new();
        let mut markers = Vec::new();
        for e in self.entries.iter().take_while(|e| e.t <= t) {
            match e.source {
                EntrySource::Frame => frame = Some(self.frames[e.index].clone()),
                EntrySource::Event => {
                    let r = &self.records[e.index];
                    if let Payload::UserEvent(p) = &r.payload {
                        cursor = Some((p.cursor_x, p.cursor_y));
                    }
                    if is_marker(r.kind()) && (r.t.0 as i128) > lo {
                        markers.push(Marker { seq: r.seq, t: r.t, kind: r.kind() });
                    }
                }
                EntrySource::Fixation => {
                    if self.fixations[e.index].is_active(t) {
                        fixations.push(self.active(e.index, t));
                    }
                }
            }
        }
        RenderInstruction { t, frame, cursor, fixations, markers }
    }

    /// Same result as [`Self::step`] with the default marker window, found
    /// by binary search.
    pub fn seek(&self, t: i64) -> RenderInstruction {
        self.seek_since(t, None)
    }

    pub fn seek_since(&self, t: i64, since: Option<Timestamp>) -> RenderInstruction {
        let t = self.clamp(t);
        let nf = self.frames.partition_point(|f| f.t <= t);
        let frame = nf.checked_sub(1).map(|i| self.frames[i].clone());
        let nc = self.cursors.partition_point(|c| c.0 <= t);
        let cursor = nc.checked_sub(1).map(|i| (self.cursors[i].1, self.cursors[i].2));
        let nx = self.fixations.partition_point(|f| f.start <= t);
        let fixations = nx
            .checked_sub(1)
            .filter(|&i| self.fixations[i].is_active(t))
            .map(|i| vec![self.active(i, t)])
            .unwrap_or_default();
        let hi = self.markers.partition_point(|m| m.t <= t);
        let lo = match since {
            Some(s) => self.markers.partition_point(|m| m.t <= s),
            None if t.0 < MARKER_WINDOW_US => 0,
            None => self.markers.partition_point(|m| m.t.0 <= t.0 - MARKER_WINDOW_US),
        };
        let markers = self.markers[lo.min(hi)..hi].to_vec();
        RenderInstruction { t, frame, cursor, fixations, markers }
    }

    /// Canvas size for rendering: the first frame's size, else the recorded
    /// screen bounds, else 1024×768.
    pub fn canvas_size(&self) -> (u32, u32) {
        let from_meta = |k: &str| self.meta.config_snapshot.get(k).and_then(|v| v.parse::<u32>().ok());
        let default = (from_meta("screen_width").unwrap_or(1024), from_meta("screen_height").unwrap_or(768));
        self.records
            .iter()
            .find_map(|r| match &r.payload {
                Payload::FrameRef(p) => Some((p.width, p.height)),
                _ => None,
            })
            .unwrap_or(default)
    }
}

/// Playback position driven by wall time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Player {
    pub position: Timestamp,
    pub speed: f64,
}

impl Player {
    pub fn new(speed: f64) -> Result<Self, ReplayError> {
        if speed.is_finite() && speed > 0.0 {
            Ok(Self { position: Timestamp::ZERO, speed })
        } else {
            Err(ReplayError::Speed)
        }
    }

    /// Advances by `wall_dt_us` and renders the events crossed since the
    /// previous position.
    pub fn advance(&mut self, timeline: &ReplayTimeline, wall_dt_us: u64) -> RenderInstruction {
        let prev = self.position;
        self.position = advance(prev, wall_dt_us, self.speed).min(timeline.t_max());
        timeline.step(self.position.0 as i64, Some(prev))
    }
}
