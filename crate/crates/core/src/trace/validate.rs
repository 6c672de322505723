use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::*;
use crate::gaze::parse_gaze_line;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum Issue {
    BadMeta { message: String },
    MalformedLine { line: usize, message: String },
    InvalidPayload { seq: u64, message: String },
    /// `seq` or `t` of this line is lower than the previous line's.
    OrderRegression { line: usize, seq: u64, t_us: u64 },
    SeqGap { missing: u64 },
    DuplicateSeq { seq: u64 },
    FrameSeqRegression { seq: u64, frame_seq: u64 },
    MissingCapture { seq: u64 },
    DanglingRef { seq: u64, file: String },
    OrphanBlob { file: String },
    GazeMalformed { line: usize, message: String },
    GazeRegression { line: usize, t_us: u64, prev_us: u64 },
    UnknownMessage { seq: u64, message_id: String },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::BadMeta { message } => write!(f, "session.json: {message}"),
            Issue::MalformedLine { line, message } => write!(f, "events.jsonl:{line}: {message}"),
            Issue::InvalidPayload { seq, message } => write!(f, "seq {seq}: {message}"),
            Issue::OrderRegression { line, seq, t_us } => {
                write!(f, "events.jsonl:{line}: order regression (seq {seq}, t_us {t_us})")
            }
            Issue::SeqGap { missing } => write!(f, "seq {missing} missing"),
            Issue::DuplicateSeq { seq } => write!(f, "seq {seq} repeated"),
            Issue::FrameSeqRegression { seq, frame_seq } => {
                write!(f, "seq {seq}: frame_seq {frame_seq} not increasing")
            }
            Issue::MissingCapture { seq } => write!(f, "seq {seq}: event not followed by a FrameRef"),
            Issue::DanglingRef { seq, file } => write!(f, "seq {seq}: referenced file {file} missing"),
            Issue::OrphanBlob { file } => write!(f, "{file} is not referenced by any record"),
            Issue::GazeMalformed { line, message } => write!(f, "gaze.csv:{line}: {message}"),
            Issue::GazeRegression { line, t_us, prev_us } => {
                write!(f, "gaze.csv:{line}: t_us {t_us} not after {prev_us}")
            }
            Issue::UnknownMessage { seq, message_id } => {
                write!(f, "seq {seq}: message id `{message_id}` not in store")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum Warning {
    EmptyUtterance { seq: u64, file: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::EmptyUtterance { seq, file } => write!(f, "seq {seq}: utterance {file} is empty"),
        }
    }
}

/// Findings for one session directory. Warnings do not make a session
/// ill-formed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn order_regressions(&self) -> usize {
        self.issues.iter().filter(|i| matches!(i, Issue::OrderRegression { .. })).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "error: {issue}")?;
        }
        for warning in &self.warnings {
            writeln!(f, "warning: {warning}")?;
        }
        Ok(())
    }
}

pub fn validate_session(directory: impl AsRef<Path>) -> Result<ValidationReport> {
    validate_session_with(directory, None)
}

/// Like [`validate_session`], additionally resolving wizard command and
/// activation message ids against `known_messages`.
pub fn validate_session_with(
    directory: impl AsRef<Path>,
    known_messages: Option<&HashSet<String>>,
) -> Result<ValidationReport> {
    let dir = directory.as_ref();
    let meta_path = dir.join(SESSION_FILE);
    if !meta_path.is_file() {
        return Err(TraceError::Structure(format!("{} missing", meta_path.display())));
    }
    let mut report = ValidationReport::default();
    match serde_json::from_slice::<SessionMeta>(&fs::read(&meta_path)?) {
        Ok(meta) => {
            if let Err(e) = meta.validate() {
                report.issues.push(Issue::BadMeta { message: e.to_string() });
            }
        }
        Err(e) => report.issues.push(Issue::BadMeta { message: e.to_string() }),
    }

    let events = fs::read_to_string(dir.join(EVENTS_FILE)).unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in events.lines().enumerate() {
        match decode_record(line) {
            Ok(r) => records.push((i + 1, r)),
            Err(e) => report.issues.push(Issue::MalformedLine { line: i + 1, message: e.to_string() }),
        }
    }
    check_records(dir, &records, known_messages, &mut report);
    check_orphans(dir, &records, &mut report)?;
    check_gaze(dir, &mut report);
    Ok(report)
}

fn check_records(
    dir: &Path,
    records: &[(usize, TraceRecord)],
    known_messages: Option<&HashSet<String>>,
    report: &mut ValidationReport,
) {
    let mut prev: Option<(u64, Timestamp)> = None;
    let mut seen = BTreeSet::new();
    let mut last_frame_seq: Option<u64> = None;
    for (idx, (line, r)) in records.iter().enumerate() {
        if let Some((pseq, pt)) = prev {
            if r.seq <= pseq || r.t < pt {
                report.issues.push(Issue::OrderRegression { line: *line, seq: r.seq, t_us: r.t.0 });
            }
        }
        prev = Some((r.seq, r.t));
        if !seen.insert(r.seq) {
            report.issues.push(Issue::DuplicateSeq { seq: r.seq });
        }
        if let Err(e) = r.payload.validate() {
            report.issues.push(Issue::InvalidPayload { seq: r.seq, message: e.to_string() });
        }
        if r.kind().captures_frame() {
            let followed = records.get(idx + 1).is_some_and(|(_, n)| n.kind() == RecordKind::FrameRef);
            if !followed {
                report.issues.push(Issue::MissingCapture { seq: r.seq });
            }
        }
        match &r.payload {
            Payload::FrameRef(p) => {
                if last_frame_seq.is_some_and(|l| p.frame_seq <= l) {
                    report.issues.push(Issue::FrameSeqRegression { seq: r.seq, frame_seq: p.frame_seq });
                }
                last_frame_seq = Some(p.frame_seq);
                if !dir.join(&p.file).is_file() {
                    report.issues.push(Issue::DanglingRef { seq: r.seq, file: p.file.clone() });
                }
            }
            Payload::UtteranceRef(p) => match fs::metadata(dir.join(&p.file)) {
                Ok(m) if m.len() == 0 => {
                    report.warnings.push(Warning::EmptyUtterance { seq: r.seq, file: p.file.clone() })
                }
                Ok(_) => {}
                Err(_) => report.issues.push(Issue::DanglingRef { seq: r.seq, file: p.file.clone() }),
            },
            Payload::WizardCommand(p) if p.command != WizardCommandKind::Undo => {
                check_known(known_messages, r.seq, &p.arg, report)
            }
            Payload::MessageActivation(p) => check_known(known_messages, r.seq, &p.message_id, report),
            _ => {}
        }
    }
    if let Some(&max) = seen.iter().next_back() {
        let expected_len = records.len() as u64;
        for missing in (0..expected_len.max(max + 1)).filter(|s| !seen.contains(s)) {
            report.issues.push(Issue::SeqGap { missing });
        }
    }
}

fn check_known(known: Option<&HashSet<String>>, seq: u64, id: &str, report: &mut ValidationReport) {
    if let Some(known) = known {
        if !known.contains(id) {
            report.issues.push(Issue::UnknownMessage { seq, message_id: id.to_string() });
        }
    }
}

fn check_orphans(dir: &Path, records: &[(usize, TraceRecord)], report: &mut ValidationReport) -> Result<()> {
    let referenced: HashSet<&str> = records
        .iter()
        .filter_map(|(_, r)| match &r.payload {
            Payload::FrameRef(p) => Some(p.file.as_str()),
            Payload::UtteranceRef(p) => Some(p.file.as_str()),
            _ => None,
        })
        .collect();
    for sub in [FRAMES_DIR, AUDIO_DIR] {
        let Ok(entries) = fs::read_dir(dir.join(sub)) else { continue };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| format!("{sub}/{}", e.file_name().to_string_lossy()))
            .collect();
        names.sort();
        for name in names {
            if !referenced.contains(name.as_str()) {
                report.issues.push(Issue::OrphanBlob { file: name });
            }
        }
    }
    Ok(())
}

fn check_gaze(dir: &Path, report: &mut ValidationReport) {
    let Ok(text) = fs::read_to_string(dir.join(GAZE_FILE)) else {
        report.issues.push(Issue::GazeMalformed { line: 0, message: "gaze.csv missing".into() });
        return;
    };
    let mut lines = text.lines();
    if lines.next() != Some(GAZE_HEADER) {
        report.issues.push(Issue::GazeMalformed { line: 1, message: "bad header".into() });
    }
    let mut prev: Option<u64> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        match parse_gaze_line(line) {
            Ok(s) => {
                if let Some(p) = prev {
                    if s.t.0 <= p {
                        report.issues.push(Issue::GazeRegression { line: line_no, t_us: s.t.0, prev_us: p });
                    }
                }
                prev = Some(s.t.0);
            }
            Err(e) => report.issues.push(Issue::GazeMalformed { line: line_no, message: e.to_string() }),
        }
    }
}
