//! Synthetic subject activity: pointer and keyboard events, host actions,
//! help requests and a 60 Hz gaze stream with dwell clusters.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use anyhow::Result;
use ozforge_core::fixtures::WIDGETS;
use ozforge_core::gaze::GazeSample;
use ozforge_core::recorder::GazeOutcome;
use ozforge_core::trace::{HelpRequestPayload, ObjectKind, Payload, RequestType, UserAction, UserEventPayload};
use ozforge_net::SubjectAgent;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Host actions the driver performs; each is logged as a KeyPress whose
/// detail is the action name.
pub const ACTIONS: [&str; 6] = ["type", "bold", "paste", "delete", "indent", "link"];

#[derive(Debug, Clone)]
pub struct DriverConfig {
    pub duration: Duration,
    pub events_per_sec: f64,
    /// Share of events that are host actions.
    pub action_ratio: f64,
    /// Synthetic gaze rate; 0 disables it.
    pub gaze_hz: u32,
    pub request_every: Option<Duration>,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            duration: Duration::from_secs(10),
            events_per_sec: 4.0,
            action_ratio: 0.2,
            gaze_hz: 0,
            request_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DriverStats {
    pub events: u64,
    pub actions: u64,
    pub requests: u64,
    pub gaze_samples: u64,
    pub gaze_rejected: u64,
}

/// Random request over the lexicon paths and widget ids, with a share of
/// paths nobody documents.
pub fn random_request(rng: &mut impl Rng, paths: &[String]) -> HelpRequestPayload {
    let rt = RequestType::ALL[rng.gen_range(0..RequestType::ALL.len())];
    match (rng.gen_range(0..10), paths.choose(rng)) {
        (0..=6, Some(p)) => HelpRequestPayload::new(rt, ObjectKind::Lexicon, p.clone()),
        (7, Some(p)) => HelpRequestPayload::new(rt, ObjectKind::Lexicon, format!("{p}/extra")),
        (9, _) => HelpRequestPayload::new(rt, ObjectKind::Lexicon, "nowhere/at/all"),
        _ => HelpRequestPayload::new(rt, ObjectKind::Widget, *WIDGETS.choose(rng).expect("widgets")),
    }
}

/// Gaze that dwells around a point for a few hundred ms, then jumps.
#[derive(Debug)]
pub struct GazeWalk {
    width: i32,
    height: i32,
    center: (i32, i32),
    left: u32,
}

impl GazeWalk {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width: width as i32, height: height as i32, center: (0, 0), left: 0 }
    }

    pub fn sample(&mut self, rng: &mut impl Rng, t_us: u64) -> GazeSample {
        if self.left == 0 {
            self.center = (rng.gen_range(0..self.width), rng.gen_range(0..self.height));
            self.left = rng.gen_range(6..50);
        }
        self.left -= 1;
        if rng.gen_bool(0.02) {
            return GazeSample::new(t_us, -1, -1, false);
        }
        let x = (self.center.0 + rng.gen_range(-6..=6)).clamp(0, self.width - 1);
        let y = (self.center.1 + rng.gen_range(-6..=6)).clamp(0, self.height - 1);
        GazeSample::new(t_us, x, y, true)
    }
}

fn random_event(rng: &mut impl Rng, w: u32, h: u32) -> UserEventPayload {
    let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
    if rng.gen_bool(0.7) {
        UserEventPayload { action: UserAction::MouseMove, cursor_x: x, cursor_y: y, detail: String::new() }
    } else {
        UserEventPayload { action: UserAction::MouseClick, cursor_x: x, cursor_y: y, detail: "left".into() }
    }
}

/// Runs until `duration` elapses or `stop` is set.
pub fn drive(agent: &SubjectAgent, config: &DriverConfig, rng: &mut ChaCha8Rng, stop: &AtomicBool) -> Result<DriverStats> {
    let bounds = agent.recorder().screen_bounds();
    let paths: Vec<String> = agent.store().lexicon().paths().map(str::to_owned).collect();
    let mut walk = GazeWalk::new(bounds.width, bounds.height);
    let mut stats = DriverStats::default();

    let start = Instant::now();
    let end = start + config.duration;
    let event_dt = (config.events_per_sec > 0.0).then(|| Duration::from_secs_f64(1.0 / config.events_per_sec));
    let gaze_dt = (config.gaze_hz > 0).then(|| Duration::from_secs_f64(1.0 / f64::from(config.gaze_hz)));
    let (mut n_event, mut n_gaze, mut n_req) = (1u32, 0u32, 1u32);
    let at = |dt: Option<Duration>, n: u32| dt.map(|d| start + d * n);

    while !stop.load(Ordering::Relaxed) {
        let next = [at(event_dt, n_event), at(gaze_dt, n_gaze), at(config.request_every, n_req)]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(end);
        if next >= end {
            break;
        }
        if let Some(wait) = next.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        if at(gaze_dt, n_gaze) == Some(next) {
            n_gaze += 1;
            let t = agent.recorder().now()?;
            let sample = walk.sample(rng, t.0);
            match agent.recorder().submit_gaze(sample)? {
                GazeOutcome::Stored => stats.gaze_samples += 1,
                GazeOutcome::Rejected => stats.gaze_rejected += 1,
            }
        } else if at(event_dt, n_event) == Some(next) {
            n_event += 1;
            if rng.gen_bool(config.action_ratio) {
                let action = *ACTIONS.choose(rng).expect("actions");
                let (x, y) = (rng.gen_range(0..bounds.width), rng.gen_range(0..bounds.height));
                let ev = UserEventPayload { action: UserAction::KeyPress, cursor_x: x, cursor_y: y, detail: action.into() };
                agent.perform_action(action, ev)?;
                stats.actions += 1;
            } else {
                agent.submit_event(Payload::UserEvent(random_event(rng, bounds.width, bounds.height)))?;
            }
            stats.events += 1;
        } else {
            n_req += 1;
            agent.submit_help_request(random_request(rng, &paths))?;
            stats.requests += 1;
        }
    }
    Ok(stats)
}
