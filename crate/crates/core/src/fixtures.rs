//! Seeded generator for a help-message corpus, its mirror and a scripted
//! session. The same spec and seed always produce the same bytes.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::jpeg::JpegEncoder;
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ManualClock;
use crate::frames::SyntheticFrames;
use crate::gaze::GazeSample;
use crate::recorder::{self, RecorderConfig, RecorderError, ScreenBounds};
use crate::store::{HelpMessage, LexiconNode, MessageSummary, ObjectRef, LEXICON_FILE, MANIFEST_FILE};
use crate::trace::{
    CueKind, CuePhase, HelpRequestPayload, MessageActivationPayload, Payload, PlaybackCuePayload,
    RequestType, SessionMeta, SystemAction, SystemEventPayload, Timestamp, UserAction, UserEventPayload,
    WizardCommandPayload,
};
use crate::wav;

/// Widget identifiers of the simulated authoring tool.
pub const WIDGETS: [&str; 8] = [
    "toolbar",
    "stage",
    "timeline_panel",
    "library_panel",
    "properties_panel",
    "color_mixer",
    "layer_list",
    "scene_tabs",
];

const WORDS: [&str; 40] = [
    "tools", "brush", "pencil", "eraser", "fill", "stroke", "symbol", "instance", "layer", "frame", "keyframe",
    "tween", "motion", "shape", "guide", "mask", "button", "movie", "graphic", "text", "font", "color", "gradient",
    "library", "scene", "stage", "timeline", "onion", "zoom", "align", "group", "break", "sound", "action", "script",
    "publish", "preview", "export", "import", "bitmap",
];

const SESSION_WIDTH: u32 = 320;
const SESSION_HEIGHT: u32 = 240;
const GAZE_RATE_HZ: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub n_messages: usize,
    pub lexicon_depth: u32,
    pub lexicon_branching: usize,
    pub session_secs: u32,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self { n_messages: 300, lexicon_depth: 3, lexicon_branching: 4, session_secs: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureTree {
    pub root: PathBuf,
    pub store_dir: PathBuf,
    pub mirror_dir: PathBuf,
    pub session_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("output directory not empty: {0}")]
    NotEmpty(PathBuf),
    #[error("bad fixture spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error("{0}")]
    Encode(String),
}

/// Writes `store/`, `mirror/` and `session/` under `out`.
pub fn gen_fixtures(out: impl AsRef<Path>, spec: &FixtureSpec) -> Result<FixtureTree, FixtureError> {
    let root = out.as_ref().to_path_buf();
    if root.exists() && fs::read_dir(&root)?.next().is_some() {
        return Err(FixtureError::NotEmpty(root));
    }
    if spec.lexicon_depth == 0 || spec.lexicon_branching == 0 {
        return Err(FixtureError::Spec("lexicon depth and branching must be positive".into()));
    }
    fs::create_dir_all(&root)?;
    let tree = FixtureTree {
        store_dir: root.join("store"),
        mirror_dir: root.join("mirror"),
        session_dir: root.join("session"),
        root,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = gen_lexicon(&mut rng, spec.lexicon_depth, spec.lexicon_branching);
    let messages = write_store(&tree.store_dir, &mut rng, &lexicon, spec.n_messages)?;
    let mut summaries: Vec<MessageSummary> = messages.iter().map(|m| m.summary.clone()).collect();
    summaries.sort_by(|a, b| a.id.cmp(&b.id));
    crate::store::MirrorStore { messages: summaries }.save(&tree.mirror_dir)?;
    write_session(&tree.session_dir, &mut rng, spec, &messages)?;
    Ok(tree)
}

fn gen_lexicon(rng: &mut ChaCha8Rng, depth: u32, branching: usize) -> Vec<LexiconNode> {
    fn level(rng: &mut ChaCha8Rng, depth: u32, branching: usize) -> Vec<LexiconNode> {
        let mut names: Vec<&str> = WORDS.to_vec();
        names.shuffle(rng);
        names
            .into_iter()
            .take(branching)
            .map(|n| LexiconNode {
                name: n.to_string(),
                children: if depth > 1 { level(rng, depth - 1, branching) } else { Vec::new() },
            })
            .collect()
    }
    level(rng, depth, branching)
}

fn lexicon_paths(nodes: &[LexiconNode], prefix: &str, out: &mut Vec<String>) {
    for n in nodes {
        let p = if prefix.is_empty() { n.name.clone() } else { format!("{prefix}/{}", n.name) };
        out.push(p.clone());
        lexicon_paths(&n.children, &p, out);
    }
}

fn write_store(
    dir: &Path,
    rng: &mut ChaCha8Rng,
    lexicon: &[LexiconNode],
    n: usize,
) -> Result<Vec<HelpMessage>, FixtureError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    lexicon_paths(lexicon, "", &mut paths);
    let mut messages = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("m{:04}", i + 1);
        let general = rng.gen_bool(0.05);
        let mut objects = BTreeSet::new();
        if !general {
            for _ in 0..rng.gen_range(1..=2) {
                objects.insert(if rng.gen_bool(0.8) {
                    ObjectRef::lexicon(paths.choose(rng).expect("lexicon is non-empty").clone())
                } else {
                    ObjectRef::widget(*WIDGETS.choose(rng).expect("widgets"))
                });
            }
        }
        let mut request_types = BTreeSet::new();
        for _ in 0..rng.gen_range(1..=3) {
            request_types.insert(*RequestType::ALL.choose(rng).expect("request types"));
        }
        let subject = objects.iter().next().map_or("the tool".to_string(), |o| o.id.replace('/', " "));
        let title = format!("{} {subject}", ["Using", "About", "Changing", "Finding"][rng.gen_range(0..4)]);

        let rel = format!("messages/{id}");
        let mdir = dir.join(&rel);
        fs::create_dir_all(&mdir)?;
        let voice_ms = rng.gen_range(300..1_500);
        fs::write(mdir.join("voice.wav"), wav::tone(8_000, voice_ms, 220.0 + 20.0 * (i % 12) as f64))?;
        fs::write(mdir.join("caption.txt"), format!("{title}.\n"))?;
        fs::write(
            mdir.join("anim.xml"),
            format!("<animation gesture=\"{}\"/>\n", ["point", "nod", "smile"][i % 3]),
        )?;
        let text_begin = rng.gen_range(0..400);
        let smil = if rng.gen_bool(0.5) {
            format!(
                "<smil>\n  <body>\n    <par>\n      <audio src=\"voice.wav\"/>\n      <text src=\"caption.txt\" begin=\"{text_begin}ms\"/>\n      <animation src=\"anim.xml\" begin=\"0.1s\"/>\n    </par>\n  </body>\n</smil>\n"
            )
        } else {
            format!(
                "<smil>\n  <body>\n    <seq>\n      <animation src=\"anim.xml\"/>\n      <audio src=\"voice.wav\" begin=\"{text_begin}ms\"/>\n      <text src=\"caption.txt\" begin=\"0.2s\"/>\n    </seq>\n  </body>\n</smil>\n"
            )
        };
        fs::write(mdir.join("help.smil"), smil)?;
        let mut attachments = Vec::new();
        if rng.gen_bool(0.3) {
            let color = Rgb([rng.gen(), rng.gen(), rng.gen()]);
            let img = RgbImage::from_fn(64, 48, |x, y| if (x / 8 + y / 8) % 2 == 0 { color } else { Rgb([250, 250, 250]) });
            let mut jpeg = Vec::new();
            JpegEncoder::new_with_quality(&mut jpeg, 80)
                .encode_image(&img)
                .map_err(|e| FixtureError::Encode(e.to_string()))?;
            fs::write(mdir.join("figure.jpg"), jpeg)?;
            attachments.push(format!("{rel}/figure.jpg"));
        }
        messages.push(HelpMessage {
            summary: MessageSummary {
                id,
                title,
                request_types,
                objects: objects.into_iter().collect(),
                general,
            },
            smil_file: format!("{rel}/help.smil"),
            attachments,
        });
    }
    fs::write(dir.join(LEXICON_FILE), pretty(&lexicon))?;
    fs::write(dir.join(MANIFEST_FILE), pretty(&messages))?;
    Ok(messages)
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("fixture data serializes");
    v.push(b'\n');
    v
}

enum Step {
    Gaze(GazeSample),
    Event(Payload),
    Append(Payload),
}

/// Scripted session: 3 to 5 input events per active second with idle
/// stretches, 60 Hz gaze built from dwell clusters, and one help exchange.
fn write_session(
    dir: &Path,
    rng: &mut ChaCha8Rng,
    spec: &FixtureSpec,
    messages: &[HelpMessage],
) -> Result<(), FixtureError> {
    let end_us = u64::from(spec.session_secs) * 1_000_000;
    let mut script: Vec<(u64, Step)> = Vec::new();

    let (w, h) = (SESSION_WIDTH, SESSION_HEIGHT);
    let mut k = 0u64;
    while k * 1_000_000 / u64::from(GAZE_RATE_HZ) < end_us {
        let (cx, cy) = (rng.gen_range(20..w as i32 - 20), rng.gen_range(20..h as i32 - 20));
        let dwell = rng.gen_range(6..30);
        for _ in 0..dwell {
            let t = k * 1_000_000 / u64::from(GAZE_RATE_HZ);
            if t >= end_us {
                break;
            }
            let valid = !rng.gen_bool(0.03);
            let (x, y) = if valid { (cx + rng.gen_range(-6..=6), cy + rng.gen_range(-6..=6)) } else { (0, 0) };
            script.push((t, Step::Gaze(GazeSample::new(t, x, y, valid))));
            k += 1;
        }
    }

    for sec in 0..u64::from(spec.session_secs) {
        if rng.gen_bool(0.2) {
            continue;
        }
        let n = rng.gen_range(3..=5);
        let mut times: Vec<u64> = (0..n).map(|_| sec * 1_000_000 + rng.gen_range(0..1_000_000)).collect();
        times.sort_unstable();
        for t in times {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let payload = match rng.gen_range(0..10) {
                0..=4 => Payload::UserEvent(UserEventPayload {
                    action: UserAction::MouseMove,
                    cursor_x: x,
                    cursor_y: y,
                    detail: String::new(),
                }),
                5..=7 => Payload::UserEvent(UserEventPayload {
                    action: UserAction::MouseClick,
                    cursor_x: x,
                    cursor_y: y,
                    detail: "left".into(),
                }),
                8 => Payload::UserEvent(UserEventPayload {
                    action: UserAction::KeyPress,
                    cursor_x: x,
                    cursor_y: y,
                    detail: ["ctrl+z", "v", "b", "enter"][rng.gen_range(0..4)].into(),
                }),
                _ => Payload::SystemEvent(SystemEventPayload {
                    action: SystemAction::MenuOpened,
                    target: ["Insert", "Modify", "Window"][rng.gen_range(0..3)].into(),
                }),
            };
            script.push((t, Step::Event(payload)));
        }
    }

    if let Some(m) = messages.iter().find(|m| !m.summary.general && !m.summary.objects.is_empty()) {
        let t0 = end_us / 3;
        let o = &m.summary.objects[0];
        let rt = *m.summary.request_types.iter().next().expect("request types are non-empty");
        script.push((t0, Step::Append(Payload::HelpRequest(HelpRequestPayload::new(rt, o.kind, o.id.clone())))));
        let t1 = t0 + 800_000;
        script.push((t1, Step::Append(Payload::WizardCommand(WizardCommandPayload::activate(m.id())))));
        script.push((
            t1,
            Step::Append(Payload::MessageActivation(MessageActivationPayload {
                message_id: m.id().to_string(),
                general: false,
            })),
        ));
        for (phase, dt) in [(CuePhase::Start, 0), (CuePhase::End, 600_000)] {
            script.push((
                t1 + dt,
                Step::Append(Payload::PlaybackCue(PlaybackCuePayload {
                    message_id: m.id().to_string(),
                    cue_kind: CueKind::Audio,
                    src: "voice.wav".into(),
                    phase,
                })),
            ));
        }
        script.push((t1 + 1_500_000, Step::Append(Payload::WizardCommand(WizardCommandPayload::undo(1)))));
    }
    script.sort_by_key(|(t, _)| *t);

    let clock = ManualClock::new();
    let mut config = RecorderConfig::new(SyntheticFrames::new(w, h, 6_000));
    config.screen_bounds = ScreenBounds { width: w, height: h };
    config.tick = None;
    config.clock = Arc::new(clock.clone());
    let mut meta = SessionMeta::new((spec.seed as u32) ^ 0x5eed, "fixture-subject");
    meta.wall_clock_start = "2024-03-01T09:00:00.000Z".into();
    meta.gaze_rate_hz = GAZE_RATE_HZ;
    meta.config_snapshot.insert("fixture_seed".into(), spec.seed.to_string());
    let rec = recorder::start(config, dir, meta)?;

    const TICK_US: u64 = 10_000;
    let mut next_tick = 0u64;
    let mut run_ticks = |until: u64| -> Result<(), RecorderError> {
        while next_tick <= until {
            clock.set(next_tick);
            rec.tick_auto_capture(Timestamp(next_tick))?;
            next_tick += TICK_US;
        }
        Ok(())
    };
    for (t, step) in script {
        run_ticks(t)?;
        clock.set(t);
        match step {
            Step::Gaze(s) => {
                rec.submit_gaze(s)?;
            }
            Step::Event(p) => {
                rec.submit_event(p)?;
            }
            Step::Append(p) => {
                rec.append(p)?;
            }
        }
    }
    run_ticks(end_us)?;
    rec.stop()?;
    Ok(())
}
