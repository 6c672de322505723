#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use ozforge_core::fixtures::{gen_fixtures, FixtureSpec, FixtureTree};
use ozforge_core::frames::SyntheticFrames;
use ozforge_core::host::ActionStack;
use ozforge_core::recorder::{RecorderConfig, ScreenBounds};
use ozforge_core::trace::{decode_record, SessionMeta, TraceRecord, UserAction, UserEventPayload, EVENTS_FILE};
use ozforge_net::{BlockingWizard, SubjectConfig, WizardConfig, WizardLink};

pub struct Env {
    pub tmp: tempfile::TempDir,
    pub tree: FixtureTree,
}

impl Env {
    pub fn new(n_messages: usize) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let spec = FixtureSpec { n_messages, session_secs: 1, ..FixtureSpec::default() };
        let tree = gen_fixtures(tmp.path().join("fx"), &spec).unwrap();
        Self { tmp, tree }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    pub fn wizard(&self) -> BlockingWizard {
        let mut cfg = WizardConfig::loopback(&self.tree.mirror_dir);
        cfg.action_log = Some(self.path("wizard.jsonl"));
        BlockingWizard::start(cfg).unwrap()
    }

    pub fn subject(&self, session: &str, wizard: Option<&BlockingWizard>) -> SubjectConfig {
        let mut rc = RecorderConfig::new(SyntheticFrames::new(160, 120, 0));
        rc.screen_bounds = ScreenBounds { width: 160, height: 120 };
        rc.auto_capture_period_ms = 500;
        let mut cfg = SubjectConfig::new(&self.tree.store_dir, self.path(session), rc, Box::new(ActionStack::new()));
        cfg.meta = SessionMeta::new(7, "s01");
        cfg.link = wizard.map(|w| WizardLink::new(w.handle().control_addr, w.handle().frame_addr));
        cfg
    }
}

pub fn click(x: u32, y: u32) -> UserEventPayload {
    UserEventPayload { action: UserAction::MouseClick, cursor_x: x, cursor_y: y, detail: "left".into() }
}

pub fn key(action: &str) -> UserEventPayload {
    UserEventPayload { action: UserAction::KeyPress, cursor_x: 1, cursor_y: 1, detail: action.into() }
}

pub fn read_log(path: &Path) -> Vec<TraceRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| decode_record(l).unwrap())
        .collect()
}

pub fn session_log(dir: &Path) -> Vec<TraceRecord> {
    read_log(&dir.join(EVENTS_FILE))
}

pub const WAIT: Duration = Duration::from_secs(5);
