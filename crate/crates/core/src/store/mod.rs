//! The pre-authored help-message corpus: manifest, hierarchical lexicon,
//! SMIL timelines, the wizard-side mirror and the suggestion filter.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{HelpRequestPayload, ObjectKind, RequestType};

mod filter;
mod lexicon;
mod smil;

pub use filter::{filter, score, Suggestion, DEFAULT_LIMIT};
pub use lexicon::{Lexicon, LexiconNode};
pub use smil::{parse_clock_ms, parse_smil, Cue, SmilError, SmilTimeline};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const MIRROR_FILE: &str = "mirror.json";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRef {
    pub kind: ObjectKind,
    pub id: String,
}

impl ObjectRef {
    pub fn lexicon(path: impl Into<String>) -> Self {
        Self { kind: ObjectKind::Lexicon, id: path.into() }
    }

    pub fn widget(id: impl Into<String>) -> Self {
        Self { kind: ObjectKind::Widget, id: id.into() }
    }

    pub fn of_request(req: &HelpRequestPayload) -> Self {
        Self { kind: req.object_kind, id: req.object_id.clone() }
    }
}

/// What the wizard needs to choose and activate a message. This is the whole
/// content of the mirror.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageSummary {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub request_types: BTreeSet<RequestType>,
    #[serde(default)]
    pub objects: Vec<ObjectRef>,
    #[serde(default)]
    pub general: bool,
}

/// One manifest entry. `smil_file` and `attachments` are relative to the
/// store root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ManifestEntry", into = "ManifestEntry")]
pub struct HelpMessage {
    pub summary: MessageSummary,
    pub smil_file: String,
    pub attachments: Vec<String>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    title: String,
    #[serde(default)]
    request_types: BTreeSet<RequestType>,
    #[serde(default)]
    objects: Vec<ObjectRef>,
    #[serde(default)]
    general: bool,
    smil_file: String,
    #[serde(default)]
    attachments: Vec<String>,
}

impl From<ManifestEntry> for HelpMessage {
    fn from(e: ManifestEntry) -> Self {
        HelpMessage {
            summary: MessageSummary {
                id: e.id,
                title: e.title,
                request_types: e.request_types,
                objects: e.objects,
                general: e.general,
            },
            smil_file: e.smil_file,
            attachments: e.attachments,
        }
    }
}

impl From<HelpMessage> for ManifestEntry {
    fn from(m: HelpMessage) -> Self {
        let s = m.summary;
        ManifestEntry {
            id: s.id,
            title: s.title,
            request_types: s.request_types,
            objects: s.objects,
            general: s.general,
            smil_file: m.smil_file,
            attachments: m.attachments,
        }
    }
}

impl HelpMessage {
    pub fn id(&self) -> &str {
        &self.summary.id
    }
}

/// One load problem, naming the message it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreIssue {
    Missing { file: String },
    Malformed { file: String, message: String },
    DuplicateId { id: String },
    DanglingFile { id: String, file: String },
    UnknownObject { id: String, object: String },
    NoObjects { id: String },
    Smil { id: String, message: String },
    Lexicon { message: String },
}

impl fmt::Display for StoreIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreIssue::Missing { file } => write!(f, "{file} missing"),
            StoreIssue::Malformed { file, message } => write!(f, "{file}: {message}"),
            StoreIssue::DuplicateId { id } => write!(f, "duplicate message id `{id}`"),
            StoreIssue::DanglingFile { id, file } => write!(f, "message `{id}`: file {file} not found"),
            StoreIssue::UnknownObject { id, object } => {
                write!(f, "message `{id}`: object `{object}` absent from lexicon")
            }
            StoreIssue::NoObjects { id } => write!(f, "message `{id}`: non-general message without objects"),
            StoreIssue::Smil { id, message } => write!(f, "message `{id}`: SMIL {message}"),
            StoreIssue::Lexicon { message } => write!(f, "lexicon: {message}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store failed to load:\n{}", .0.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<StoreIssue>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StoreError {
    pub fn issues(&self) -> &[StoreIssue] {
        match self {
            StoreError::Invalid(v) => v,
            StoreError::Io(_) => &[],
        }
    }
}

/// Subject-side store: messages with resolved timelines. Immutable after load.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    messages: Vec<HelpMessage>,
    summaries: Vec<MessageSummary>,
    index: HashMap<String, usize>,
    timelines: Vec<SmilTimeline>,
    lexicon: Lexicon,
}

pub fn load_store(directory: impl AsRef<Path>) -> Result<Store, StoreError> {
    let root = directory.as_ref().to_path_buf();
    let mut issues = Vec::new();

    let read_json = |name: &str, issues: &mut Vec<StoreIssue>| -> Option<serde_json::Value> {
        match fs::read(root.join(name)) {
            Ok(bytes) => match serde_json::from_slice(&bytes) {
                Ok(v) => Some(v),
                Err(e) => {
                    issues.push(StoreIssue::Malformed { file: name.into(), message: e.to_string() });
                    None
                }
            },
            Err(_) => {
                issues.push(StoreIssue::Missing { file: name.into() });
                None
            }
        }
    };
    let manifest = read_json(MANIFEST_FILE, &mut issues);
    let lexicon = read_json(LEXICON_FILE, &mut issues);
    let lexicon = match lexicon.map(Lexicon::from_json) {
        Some(Ok(l)) => Some(l),
        Some(Err(message)) => {
            issues.push(StoreIssue::Lexicon { message });
            None
        }
        None => None,
    };
    let messages: Option<Vec<HelpMessage>> = manifest.and_then(|v| match serde_json::from_value(v) {
        Ok(m) => Some(m),
        Err(e) => {
            issues.push(StoreIssue::Malformed { file: MANIFEST_FILE.into(), message: e.to_string() });
            None
        }
    });
    let (Some(mut messages), Some(lexicon)) = (messages, lexicon) else {
        return Err(StoreError::Invalid(issues));
    };

    let mut seen = HashSet::new();
    for m in &messages {
        if !seen.insert(m.id().to_string()) {
            issues.push(StoreIssue::DuplicateId { id: m.id().to_string() });
        }
    }
    messages.sort_by(|a, b| a.summary.id.cmp(&b.summary.id));
    let mut timelines = Vec::with_capacity(messages.len());
    for m in &messages {
        let id = m.id().to_string();
        if !m.summary.general && m.summary.objects.is_empty() {
            issues.push(StoreIssue::NoObjects { id: id.clone() });
        }
        for o in &m.summary.objects {
            let known = match o.kind {
                ObjectKind::Lexicon => lexicon.contains(&o.id),
                ObjectKind::Widget => !o.id.is_empty(),
            };
            if !known {
                issues.push(StoreIssue::UnknownObject { id: id.clone(), object: o.id.clone() });
            }
        }
        for a in &m.attachments {
            if !root.join(a).is_file() {
                issues.push(StoreIssue::DanglingFile { id: id.clone(), file: a.clone() });
            }
        }
        let smil_path = root.join(&m.smil_file);
        let timeline = match fs::read_to_string(&smil_path) {
            Err(_) => {
                issues.push(StoreIssue::DanglingFile { id: id.clone(), file: m.smil_file.clone() });
                SmilTimeline::default()
            }
            Ok(text) => match parse_smil(&text) {
                Ok(t) => {
                    let base = smil_path.parent().unwrap_or(&root);
                    for cue in &t.cues {
                        if !base.join(&cue.src).is_file() {
                            issues.push(StoreIssue::DanglingFile {
                                id: id.clone(),
                                file: relative(&root, &base.join(&cue.src)),
                            });
                        }
                    }
                    t
                }
                Err(e) => {
                    issues.push(StoreIssue::Smil { id: id.clone(), message: e.to_string() });
                    SmilTimeline::default()
                }
            },
        };
        timelines.push(timeline);
    }
    if !issues.is_empty() {
        return Err(StoreError::Invalid(issues));
    }
    let index = messages.iter().enumerate().map(|(i, m)| (m.id().to_string(), i)).collect();
    let summaries = messages.iter().map(|m| m.summary.clone()).collect();
    Ok(Store { root, messages, summaries, index, timelines, lexicon })
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned()
}

impl Store {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn messages(&self) -> &[HelpMessage] {
        &self.messages
    }

    pub fn summaries(&self) -> &[MessageSummary] {
        &self.summaries
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn get(&self, id: &str) -> Option<&HelpMessage> {
        self.index.get(id).map(|&i| &self.messages[i])
    }

    pub fn timeline(&self, id: &str) -> Option<&SmilTimeline> {
        self.index.get(id).map(|&i| &self.timelines[i])
    }

    /// Absolute path of a cue source, resolved against its SMIL file.
    pub fn cue_path(&self, id: &str, cue: &Cue) -> Option<PathBuf> {
        let m = self.get(id)?;
        let smil = self.root.join(&m.smil_file);
        Some(smil.parent().unwrap_or(&self.root).join(&cue.src))
    }

    pub fn ids(&self) -> HashSet<String> {
        self.index.keys().cloned().collect()
    }

    /// Bytes of every file under the store directory.
    pub fn total_bytes(&self) -> std::io::Result<u64> {
        dir_bytes(&self.root)
    }

    pub fn filter(&self, request: &HelpRequestPayload, limit: usize) -> Vec<Suggestion> {
        filter(&self.summaries, request, limit)
    }

    pub fn mirror(&self) -> MirrorStore {
        MirrorStore { messages: self.summaries.clone() }
    }
}

fn dir_bytes(p: &Path) -> std::io::Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(p)? {
        let entry = entry?;
        let meta = entry.metadata()?;
        total += if meta.is_dir() { dir_bytes(&entry.path())? } else { meta.len() };
    }
    Ok(total)
}

pub fn mirror(store: &Store) -> MirrorStore {
    store.mirror()
}

/// Wizard-side projection of the store: ids, titles, request types, objects
/// and the general flag. No SMIL, attachments or media.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorStore {
    pub messages: Vec<MessageSummary>,
}

impl MirrorStore {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("mirror serializes")
    }

    pub fn save(&self, directory: impl AsRef<Path>) -> std::io::Result<()> {
        fs::create_dir_all(directory.as_ref())?;
        fs::write(directory.as_ref().join(MIRROR_FILE), self.to_json())
    }

    pub fn load(directory: impl AsRef<Path>) -> Result<Self, StoreError> {
        let file = directory.as_ref().join(MIRROR_FILE);
        let bytes = fs::read(&file)
            .map_err(|_| StoreError::Invalid(vec![StoreIssue::Missing { file: file.display().to_string() }]))?;
        let mut mirror: MirrorStore = serde_json::from_slice(&bytes).map_err(|e| {
            StoreError::Invalid(vec![StoreIssue::Malformed { file: MIRROR_FILE.into(), message: e.to_string() }])
        })?;
        let mut seen = HashSet::new();
        let dups: Vec<StoreIssue> = mirror
            .messages
            .iter()
            .filter(|m| !seen.insert(m.id.clone()))
            .map(|m| StoreIssue::DuplicateId { id: m.id.clone() })
            .collect();
        if !dups.is_empty() {
            return Err(StoreError::Invalid(dups));
        }
        mirror.messages.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(mirror)
    }

    pub fn get(&self, id: &str) -> Option<&MessageSummary> {
        self.messages.binary_search_by(|m| m.id.as_str().cmp(id)).ok().map(|i| &self.messages[i])
    }

    pub fn filter(&self, request: &HelpRequestPayload, limit: usize) -> Vec<Suggestion> {
        filter(&self.messages, request, limit)
    }

    pub fn general_messages(&self) -> impl Iterator<Item = &MessageSummary> {
        self.messages.iter().filter(|m| m.general)
    }
}
