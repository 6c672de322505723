use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::*;
use crate::clock::Clock;
use crate::gaze::GazeSample;

/// Single-writer handle onto an open session directory.
///
/// Timestamps are taken from the handle's clock at append time and clamped so
/// they never run backwards within the log.
pub struct SessionHandle {
    dir: PathBuf,
    meta: SessionMeta,
    clock: Arc<dyn Clock>,
    events: Option<BufWriter<File>>,
    gaze: Option<BufWriter<File>>,
    next_seq: u64,
    last_t: Timestamp,
    next_frame_seq: u64,
    next_utterance: u32,
    last_gaze_t: Option<u64>,
}

impl std::fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionHandle")
            .field("dir", &self.dir)
            .field("next_seq", &self.next_seq)
            .field("open", &self.is_open())
            .finish()
    }
}

/// Creates the session layout under `directory` and returns a handle whose
/// sequence counter starts at 0.
pub fn open_session(
    directory: impl AsRef<Path>,
    meta: SessionMeta,
    clock: Arc<dyn Clock>,
) -> Result<SessionHandle> {
    let dir = directory.as_ref().to_path_buf();
    meta.validate()?;
    if dir.exists() {
        if fs::read_dir(&dir)?.next().is_some() {
            return Err(TraceError::DirectoryNotEmpty(dir.display().to_string()));
        }
    } else {
        fs::create_dir_all(&dir)?;
    }
    fs::create_dir(dir.join(FRAMES_DIR))?;
    fs::create_dir(dir.join(AUDIO_DIR))?;
    fs::write(dir.join(SESSION_FILE), serde_json::to_vec_pretty(&meta)?)?;
    let events = File::create(dir.join(EVENTS_FILE))?;
    let mut gaze = BufWriter::new(File::create(dir.join(GAZE_FILE))?);
    writeln!(gaze, "{GAZE_HEADER}")?;
    gaze.flush()?;
    Ok(SessionHandle {
        dir,
        meta,
        clock,
        events: Some(BufWriter::new(events)),
        gaze: Some(gaze),
        next_seq: 0,
        last_t: Timestamp::ZERO,
        next_frame_seq: 0,
        next_utterance: 0,
        last_gaze_t: None,
    })
}

impl SessionHandle {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn is_open(&self) -> bool {
        self.events.is_some()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn last_t(&self) -> Timestamp {
        self.last_t
    }

    /// Current session time, never earlier than the last appended record.
    pub fn now(&self) -> Timestamp {
        Timestamp(self.clock.now_us()).max(self.last_t)
    }

    fn ensure_open(&self) -> Result<()> {
        if self.is_open() {
            Ok(())
        } else {
            Err(TraceError::Usage("session is closed".into()))
        }
    }

    pub fn append_record(&mut self, kind: RecordKind, payload: Payload) -> Result<TraceRecord> {
        if payload.kind() != kind {
            return Err(TraceError::Validation(format!(
                "payload is {} but kind is {kind}",
                payload.kind()
            )));
        }
        self.append(payload)
    }

    pub fn append(&mut self, payload: Payload) -> Result<TraceRecord> {
        let t = self.now();
        self.append_at(t, payload)
    }

    /// Appends with an explicit timestamp (used for utterances, which are
    /// dated by their acquisition start). `t` is clamped to the log's last
    /// timestamp.
    pub fn append_at(&mut self, t: Timestamp, payload: Payload) -> Result<TraceRecord> {
        self.ensure_open()?;
        payload.validate()?;
        let record = TraceRecord { seq: self.next_seq, t: t.max(self.last_t), payload };
        let line = encode_record(&record);
        let events = self.events.as_mut().expect("checked open");
        events.write_all(line.as_bytes())?;
        events.write_all(b"\n")?;
        events.flush()?;
        self.next_seq += 1;
        self.last_t = record.t;
        Ok(record)
    }

    /// Writes a frame blob and returns the FrameRef payload describing it.
    /// The caller appends the record.
    pub fn write_frame(&mut self, jpeg: &[u8], width: u32, height: u32) -> Result<FrameRefPayload> {
        self.ensure_open()?;
        let frame_seq = self.next_frame_seq;
        let file = frame_file_name(frame_seq);
        fs::write(self.dir.join(&file), jpeg)?;
        self.next_frame_seq += 1;
        Ok(FrameRefPayload { frame_seq, file, width, height, byte_len: jpeg.len() as u64 })
    }

    pub fn write_utterance(&mut self, wav: &[u8]) -> Result<UtteranceRefPayload> {
        self.ensure_open()?;
        let file = utterance_file_name(self.next_utterance);
        fs::write(self.dir.join(&file), wav)?;
        self.next_utterance += 1;
        Ok(UtteranceRefPayload { file, duration_ms: crate::wav::duration_ms(wav) })
    }

    /// Appends one gaze row. Samples must be strictly increasing in time.
    pub fn append_gaze(&mut self, sample: &GazeSample) -> Result<()> {
        self.ensure_open()?;
        if let Some(last) = self.last_gaze_t {
            if sample.t.0 <= last {
                return Err(TraceError::GazeOutOfOrder { t: sample.t.0, last });
            }
        }
        let gaze = self.gaze.as_mut().expect("checked open");
        writeln!(gaze, "{}", sample.to_csv_line())?;
        self.last_gaze_t = Some(sample.t.0);
        Ok(())
    }

    pub fn close(&mut self) -> Result<()> {
        self.ensure_open()?;
        if let Some(mut events) = self.events.take() {
            events.flush()?;
            events.get_ref().sync_all()?;
        }
        if let Some(mut gaze) = self.gaze.take() {
            gaze.flush()?;
        }
        Ok(())
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        if let Some(g) = self.gaze.as_mut() {
            let _ = g.flush();
        }
    }
}
