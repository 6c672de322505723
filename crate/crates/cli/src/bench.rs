//! Loopback protocol bench: a subject agent streams pre-rendered frames to a
//! wizard service through the seeded loss simulator while help requests
//! make round trips on the control channel.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use ozforge_core::fixtures::{gen_fixtures, FixtureSpec};
use ozforge_core::frames::{ScreenFrame, SyntheticFrames};
use ozforge_core::host::ActionStack;
use ozforge_core::recorder::{RecorderConfig, ScreenBounds};
use ozforge_core::trace::{Payload, SessionMeta, Timestamp, UserAction, UserEventPayload};
use ozforge_net::wizard::{LatencySummary, StreamEvent, WizardSnapshot};
use ozforge_net::{BlockingWizard, SubjectAgent, SubjectConfig, WizardConfig, WizardLink};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::driver::random_request;

const FRAME_POOL: u64 = 8;
const DRAIN_TIMEOUT: Duration = Duration::from_secs(10);
const ROUND_TRIP_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone)]
pub struct BenchParams {
    pub frames: u64,
    /// Target JPEG size in bytes.
    pub size: usize,
    pub loss: f64,
    pub seed: u64,
    pub fps: u32,
    /// A help request follows every this many frames; 0 disables them.
    pub request_every: u64,
    pub width: u32,
    pub height: u32,
    /// Keeps the subject session here instead of a temporary directory.
    pub session_dir: Option<PathBuf>,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            frames: 300,
            size: 100_000,
            loss: 0.0,
            seed: 0,
            fps: 30,
            request_every: 30,
            width: 320,
            height: 240,
            session_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub loss: f64,
    pub fps_target: u32,
    pub frame_bytes: usize,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    /// Frames of which at least one datagram never arrived.
    pub frames_lost: u64,
    /// Partially received frames the reassembler gave up on.
    pub frames_dropped_incomplete: u64,
    pub frames_queue_dropped: u64,
    pub frames_rate_limited: u64,
    pub fps_sustained: f64,
    pub fps_delivered: f64,
    pub datagrams_sent: u64,
    pub datagrams_dropped: u64,
    pub datagrams_delivered: u64,
    pub events_sent: u64,
    pub events_received: u64,
    pub event_order_violations: u64,
    pub requests_sent: u64,
    pub requests_received: u64,
    pub request_order_violations: u64,
    pub control_round_trips: u64,
    pub latency_p50_ms: f64,
    pub latency_p99_ms: f64,
    pub latency_max_ms: f64,
    pub elapsed_s: f64,
}

fn frame_pool(p: &BenchParams) -> Result<Vec<ScreenFrame>> {
    let synth = SyntheticFrames::new(p.width, p.height, p.size);
    let pool: Vec<ScreenFrame> = (0..FRAME_POOL).map(|i| synth.render(i)).collect();
    if pool.iter().any(|f| f.jpeg.len() != p.size) {
        let natural = pool.iter().map(|f| f.jpeg.len()).max().unwrap_or(0);
        bail!(
            "frame size {} cannot be hit at {}x{} (frames encode to {natural} bytes); raise --size or lower the resolution",
            p.size,
            p.width,
            p.height
        );
    }
    Ok(pool)
}

fn ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

/// Submits a help request and waits for the wizard to push its
/// suggestions; returns the round trip in µs.
fn round_trip(agent: &SubjectAgent, wizard: &BlockingWizard, rng: &mut ChaCha8Rng, paths: &[String]) -> Result<Option<u64>> {
    let mut rx = wizard.subscribe();
    let sent = Instant::now();
    let record = agent.submit_help_request(random_request(rng, paths))?;
    let wait = async {
        loop {
            match rx.recv().await {
                Ok(StreamEvent::Suggestions { seq, .. }) if seq == record.seq => return true,
                Ok(_) | Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => {}
                Err(tokio::sync::broadcast::error::RecvError::Closed) => return false,
            }
        }
    };
    let ok = wizard.runtime().block_on(async { tokio::time::timeout(ROUND_TRIP_TIMEOUT, wait).await.unwrap_or(false) });
    Ok(ok.then(|| sent.elapsed().as_micros() as u64))
}

pub fn run(p: &BenchParams) -> Result<BenchReport> {
    if p.fps == 0 {
        bail!("--fps must be positive");
    }
    if !(0.0..=1.0).contains(&p.loss) {
        bail!("--loss must be within [0, 1]");
    }
    let pool = Arc::new(frame_pool(p)?);
    let tmp = tempfile::tempdir()?;
    let spec = FixtureSpec { session_secs: 1, seed: p.seed, ..FixtureSpec::default() };
    let tree = gen_fixtures(tmp.path().join("fixtures"), &spec).context("generating the bench store")?;

    let wizard = BlockingWizard::start(WizardConfig::loopback(&tree.mirror_dir))?;
    let mut counter = 0u64;
    let frames = pool.clone();
    let mut rc = RecorderConfig::new(move |_t: Timestamp| {
        let f = frames[(counter % FRAME_POOL) as usize].clone();
        counter += 1;
        f
    });
    rc.screen_bounds = ScreenBounds { width: p.width, height: p.height };
    rc.tick = None;
    let session_dir = p.session_dir.clone().unwrap_or_else(|| tmp.path().join("session"));
    let mut cfg = SubjectConfig::new(&tree.store_dir, session_dir, rc, Box::new(ActionStack::new()));
    cfg.meta = SessionMeta::new(1, "bench");
    cfg.meta.config_snapshot.insert("bench.seed".into(), p.seed.to_string());
    cfg.meta.config_snapshot.insert("bench.loss".into(), p.loss.to_string());
    cfg.link = Some(WizardLink::new(wizard.handle().control_addr, wizard.handle().frame_addr));
    // the bench measures the link, so the subject's rate cap stays out of the way
    cfg.max_send_fps = u32::MAX;
    cfg.send_queue = 64;
    cfg.simulated_loss = (p.loss > 0.0).then_some((p.loss, p.seed));
    let agent = SubjectAgent::start(cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(1);
    let paths: Vec<String> = agent.store().lexicon().paths().map(str::to_owned).collect();
    let period = Duration::from_secs_f64(1.0 / f64::from(p.fps));
    let mut latencies = Vec::new();
    let mut requests_sent = 0;

    let start = Instant::now();
    let mut last = start;
    for i in 0..p.frames {
        let due = start + period * i as u32;
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        let ev = UserEventPayload {
            action: UserAction::MouseMove,
            cursor_x: rng.gen_range(0..p.width),
            cursor_y: rng.gen_range(0..p.height),
            detail: String::new(),
        };
        agent.submit_event(Payload::UserEvent(ev))?;
        last = Instant::now();
        if p.request_every > 0 && (i + 1) % p.request_every == 0 {
            requests_sent += 1;
            if let Some(us) = round_trip(&agent, &wizard, &mut rng, &paths)? {
                latencies.push(us);
            }
        }
    }
    let send_elapsed = (last - start + period).as_secs_f64();

    // every event captured a frame; wait for the sender to account for all of them
    let deadline = Instant::now() + DRAIN_TIMEOUT;
    let mut stats = agent.stats();
    while stats.frames_sent + stats.frames_queue_dropped + stats.frames_rate_limited < p.frames && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
        stats = agent.stats();
    }
    let expect_datagrams = stats.datagrams_sent - stats.datagrams_dropped;
    let drained = |s: &WizardSnapshot| {
        s.events_received >= stats.events_forwarded
            && s.requests_received >= requests_sent
            && s.link.datagrams_received >= expect_datagrams
    };
    // a shortfall after the timeout is reported, not fatal
    let snap = wizard.wait_until(DRAIN_TIMEOUT, drained).or_else(|_| wizard.snapshot())?;
    let elapsed = start.elapsed().as_secs_f64();
    agent.stop()?;
    wizard.shutdown();

    let lat = LatencySummary::of(&latencies);
    Ok(BenchReport {
        seed: p.seed,
        loss: p.loss,
        fps_target: p.fps,
        frame_bytes: p.size,
        frames_sent: stats.frames_sent,
        frames_delivered: snap.link.frames_delivered,
        frames_lost: stats.frames_sent.saturating_sub(snap.link.frames_delivered),
        frames_dropped_incomplete: snap.link.frames_dropped,
        frames_queue_dropped: stats.frames_queue_dropped,
        frames_rate_limited: stats.frames_rate_limited,
        fps_sustained: stats.frames_sent as f64 / send_elapsed,
        fps_delivered: snap.link.frames_delivered as f64 / send_elapsed,
        datagrams_sent: stats.datagrams_sent,
        datagrams_dropped: stats.datagrams_dropped,
        datagrams_delivered: snap.link.datagrams_received,
        events_sent: stats.events_forwarded,
        events_received: snap.events_received,
        event_order_violations: snap.event_order_violations,
        requests_sent,
        requests_received: snap.requests_received,
        request_order_violations: snap.request_order_violations,
        control_round_trips: latencies.len() as u64,
        latency_p50_ms: ms(lat.p50_us),
        latency_p99_ms: ms(lat.p99_us),
        latency_max_ms: ms(lat.max_us),
        elapsed_s: elapsed,
    })
}
