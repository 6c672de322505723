//! Acceptance run: one PASS/FAIL line per criterion. The soak lasts
//! OZFORGE_SOAK_SECS seconds (600 by default).

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ozforge_cli::bench::{self, BenchParams};
use ozforge_cli::driver::{drive, random_request, DriverConfig};
use ozforge_core::clock::ManualClock;
use ozforge_core::fixtures::{gen_fixtures, FixtureSpec, FixtureTree};
use ozforge_core::frames::SyntheticFrames;
use ozforge_core::gaze::{detect_fixations, read_gaze_csv, FixationParams};
use ozforge_core::host::{state_id_of, ActionStack};
use ozforge_core::recorder::{RecorderConfig, ScreenBounds};
use ozforge_core::replay;
use ozforge_core::store::{load_store, MirrorStore, DEFAULT_LIMIT};
use ozforge_core::trace::{
    decode_record, validate_session, Payload, SessionMeta, TraceRecord, UserAction, WizardCommandKind, EVENTS_FILE,
    GAZE_FILE,
};
use ozforge_core::wire::{chunk_frame, parse_datagram, LossyChannel, Reassembler, DEFAULT_MAX_DATAGRAM};
use ozforge_net::wizard::{LatencySummary, StreamEvent};
use ozforge_net::{BlockingWizard, SubjectAgent, SubjectConfig, WizardConfig, WizardLink};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    ok.then_some(()).ok_or_else(|| what.into())
}

fn fixtures(root: &Path, session_secs: u32) -> FixtureTree {
    gen_fixtures(root.join("fx"), &FixtureSpec { session_secs, ..FixtureSpec::default() }).expect("fixtures")
}

fn read_log(path: &Path) -> Vec<TraceRecord> {
    std::fs::read_to_string(path)
        .expect("log readable")
        .lines()
        .map(|l| decode_record(l).expect("log line decodes"))
        .collect()
}

fn subject_config(tree: &FixtureTree, session: PathBuf, wizard: &BlockingWizard, rc: RecorderConfig) -> SubjectConfig {
    let mut cfg = SubjectConfig::new(&tree.store_dir, session, rc, Box::new(ActionStack::new()));
    cfg.meta = SessionMeta::new(1, "acceptance");
    cfg.link = Some(WizardLink::new(wizard.handle().control_addr, wizard.handle().frame_addr));
    cfg
}

fn throughput() -> Verdict {
    let fps = 32;
    let params = BenchParams {
        frames: 60 * u64::from(fps),
        size: 100_000,
        fps,
        request_every: u64::from(fps),
        ..BenchParams::default()
    };
    let r = bench::run(&params).map_err(|e| e.to_string())?;
    let seconds = r.frames_sent as f64 / r.fps_sustained;
    let detail = format!(
        "{:.1} fps sent, {:.1} fps delivered over {seconds:.1} s, {}/{} events, {}/{} requests",
        r.fps_sustained, r.fps_delivered, r.events_received, r.events_sent, r.control_round_trips, r.requests_sent
    );
    check(seconds >= 60.0, format!("ran {seconds:.1} s: {detail}"))?;
    check(r.fps_sustained >= 30.0 && r.fps_delivered >= 30.0, detail.clone())?;
    check(r.events_received == r.events_sent && r.event_order_violations == 0, format!("event loss/reorder: {detail}"))?;
    check(
        r.requests_received == r.requests_sent && r.control_round_trips == r.requests_sent && r.request_order_violations == 0,
        format!("request loss/reorder: {detail}"),
    )?;
    Ok(detail)
}

fn gaze() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let tree = fixtures(tmp.path(), 1);
    let wizard = BlockingWizard::start(WizardConfig::loopback(&tree.mirror_dir)).map_err(|e| e.to_string())?;
    let clock = Arc::new(ManualClock::new());
    let mut rc = RecorderConfig::new(SyntheticFrames::new(160, 120, 0));
    rc.screen_bounds = ScreenBounds { width: 1024, height: 768 };
    rc.tick = None;
    rc.clock = clock.clone();
    let session = tmp.path().join("gaze");
    let mut cfg = subject_config(&tree, session.clone(), &wizard, rc);
    cfg.forward_gaze = true;
    let agent = SubjectAgent::start(cfg).map_err(|e| e.to_string())?;

    // ten minutes of 60 Hz samples on a simulated clock
    let n = 36_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut walk = ozforge_cli::driver::GazeWalk::new(1024, 768);
    let mut sent = Vec::with_capacity(n as usize);
    for i in 0..n {
        let t = (i + 1) * 1_000_000 / 60;
        clock.set(t);
        let s = walk.sample(&mut rng, t);
        agent.recorder().submit_gaze(s).map_err(|e| e.to_string())?;
        sent.push(s);
    }
    let snap = wizard.wait_until(Duration::from_secs(10), |s| s.link.gaze_samples_received >= n).map_err(|e| e.to_string())?;
    let summary = agent.stop().map_err(|e| e.to_string())?;
    wizard.shutdown();
    let file = std::fs::File::open(session.join(GAZE_FILE)).map_err(|e| e.to_string())?;
    let stored = read_gaze_csv(std::io::BufReader::new(file)).map_err(|(l, e)| format!("gaze.csv line {l}: {e}"))?;
    check(summary.gaze_rejected == 0 && summary.gaze_rows == n, format!("{} rows, {} rejected", summary.gaze_rows, summary.gaze_rejected))?;
    check(stored == sent, "gaze.csv differs from the submitted stream")?;
    check(
        snap.link.gaze_samples_received == n,
        format!("wizard received {} of {n} forwarded samples", snap.link.gaze_samples_received),
    )?;

    let params = FixationParams::default();
    let mut total = 0;
    for trace in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trace);
        let len = rng.gen_range(1..=2000);
        let samples = oracles::random_trace(&mut rng, len);
        let got = detect_fixations(&samples, &params).map_err(|e| e.to_string())?;
        check(got == oracles::fixations(&samples, &params), format!("trace {trace} ({len} samples) disagrees with the oracle"))?;
        total += got.len();
    }
    Ok(format!("{n} samples stored and forwarded, 100 traces match the oracle ({total} fixations)"))
}

fn lossy() -> Verdict {
    let (frames, loss, seed) = (1000usize, 0.05, 42u64);
    let synth = SyntheticFrames::new(320, 240, 50_000);
    let originals: Vec<Vec<u8>> = (0..frames as u64).map(|i| synth.render(i).jpeg.to_vec()).collect();
    let mut channel = LossyChannel::new(loss, 0.0, seed);
    let mut reasm = Reassembler::new(ozforge_core::wire::DEFAULT_MAX_PENDING);
    let mut chunks = Vec::with_capacity(frames);
    let mut delivered = 0;
    for (seq, jpeg) in originals.iter().enumerate() {
        let datagrams = chunk_frame(jpeg, 1, seq as u32, seq as u64 * 20_000, DEFAULT_MAX_DATAGRAM).map_err(|e| e.to_string())?;
        chunks.push(datagrams.len());
        for d in channel.transmit(datagrams) {
            let chunk = parse_datagram(&d).map_err(|e| format!("corrupt datagram: {e}"))?;
            if let Some(done) = reasm.push(chunk) {
                check(done.bytes == originals[done.frame_seq as usize], format!("frame {} corrupted", done.frame_seq))?;
                delivered += 1;
            }
        }
    }
    let stats = reasm.finish();
    let drops = oracles::seeded_drops(seed, loss, chunks.iter().sum());
    let expected_incomplete = oracles::partially_lost_frames(&chunks, &drops) as u64;
    let mut at = 0;
    let expected_delivered = chunks
        .iter()
        .filter(|&&c| {
            at += c;
            !drops[at - c..at].contains(&true)
        })
        .count();
    check(
        stats.dropped_incomplete == expected_incomplete && delivered == expected_delivered,
        format!(
            "dropped_incomplete {} (oracle {expected_incomplete}), delivered {delivered} (oracle {expected_delivered})",
            stats.dropped_incomplete
        ),
    )?;

    // the same seed end to end over UDP
    let params = BenchParams { frames: frames as u64, size: 50_000, loss, seed, fps: 100, request_every: 0, ..BenchParams::default() };
    let r = bench::run(&params).map_err(|e| e.to_string())?;
    check(
        r.frames_delivered == expected_delivered as u64 && r.datagrams_dropped == drops.iter().filter(|d| **d).count() as u64,
        format!("UDP run delivered {} frames (oracle {expected_delivered})", r.frames_delivered),
    )?;
    Ok(format!(
        "{delivered}/{frames} frames bit-identical, dropped_incomplete {} = oracle, UDP run agrees",
        stats.dropped_incomplete
    ))
}

fn filter() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let tree = fixtures(tmp.path(), 1);
    let store = load_store(&tree.store_dir).map_err(|e| e.to_string())?;
    let mirror = MirrorStore::load(&tree.mirror_dir).map_err(|e| e.to_string())?;
    check(store.len() >= 300, format!("store has {} messages", store.len()))?;
    let paths: Vec<String> = store.lexicon().paths().map(str::to_owned).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let requests: Vec<_> = (0..1000).map(|_| random_request(&mut rng, &paths)).collect();

    for (i, req) in requests.iter().enumerate() {
        let got = store.filter(req, DEFAULT_LIMIT);
        let pairs: Vec<(String, u8)> = got.iter().map(|s| (s.message_id.clone(), s.score)).collect();
        check(pairs == oracles::filter(store.summaries(), req, DEFAULT_LIMIT), format!("request {i} disagrees with the oracle"))?;
        check(mirror.filter(req, DEFAULT_LIMIT) == got, format!("request {i}: mirror and store disagree"))?;
    }

    let wizard = BlockingWizard::start(WizardConfig::loopback(&tree.mirror_dir)).map_err(|e| e.to_string())?;
    let mut rc = RecorderConfig::new(SyntheticFrames::new(160, 120, 0));
    rc.screen_bounds = ScreenBounds { width: 160, height: 120 };
    let agent = SubjectAgent::start(subject_config(&tree, tmp.path().join("filter"), &wizard, rc)).map_err(|e| e.to_string())?;
    let mut rx = wizard.subscribe();
    let n = requests.len();
    let collector = wizard.runtime().spawn(async move {
        let mut got = Vec::new();
        while got.len() < n {
            match rx.recv().await {
                Ok(StreamEvent::Suggestions { seq, suggestions }) => got.push((seq, suggestions)),
                Ok(_) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
        Ok(got)
    });
    let mut seqs = Vec::new();
    for req in &requests {
        seqs.push(agent.submit_help_request(req.clone()).map_err(|e| e.to_string())?.seq);
    }
    let pushed = wizard
        .runtime()
        .block_on(async { tokio::time::timeout(Duration::from_secs(30), collector).await })
        .map_err(|_| "suggestions for every request did not arrive in 30 s".to_string())?
        .map_err(|e| e.to_string())??;
    let latencies = wizard.filter_latencies().map_err(|e| e.to_string())?;
    agent.stop().map_err(|e| e.to_string())?;
    wizard.shutdown();

    for ((req, seq), (got_seq, suggestions)) in requests.iter().zip(&seqs).zip(&pushed) {
        check(seq == got_seq, format!("suggestions for seq {got_seq} arrived where {seq} was expected"))?;
        check(*suggestions == store.filter(req, DEFAULT_LIMIT), format!("wizard suggestions for seq {seq} differ"))?;
    }
    let lat = LatencySummary::of(&latencies);
    let p99_ms = lat.p99_us as f64 / 1000.0;
    let detail = format!("1000 requests match the oracle, mirror = store; wizard p50 {:.3} ms, p99 {p99_ms:.3} ms", lat.p50_us as f64 / 1000.0);
    check(lat.count == n && p99_ms < 10.0, detail.clone())?;
    Ok(detail)
}

struct Soak {
    _tmp: tempfile::TempDir,
    session: PathBuf,
}

fn soak(secs: u64, keep: &mut Option<Soak>) -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let tree = fixtures(tmp.path(), 1);
    let mut wcfg = WizardConfig::loopback(&tree.mirror_dir);
    let action_log = tmp.path().join("wizard.jsonl");
    wcfg.action_log = Some(action_log.clone());
    let wizard = BlockingWizard::start(wcfg).map_err(|e| e.to_string())?;
    let generals: Vec<String> = MirrorStore::load(&tree.mirror_dir)
        .map_err(|e| e.to_string())?
        .general_messages()
        .map(|m| m.id.clone())
        .collect();

    let mut rc = RecorderConfig::new(SyntheticFrames::new(320, 240, 0));
    rc.screen_bounds = ScreenBounds { width: 320, height: 240 };
    let session = tmp.path().join("soak");
    let mut cfg = subject_config(&tree, session.clone(), &wizard, rc);
    cfg.forward_gaze = true;
    let agent = SubjectAgent::start(cfg).map_err(|e| e.to_string())?;

    let driver = DriverConfig {
        duration: Duration::from_secs(secs),
        events_per_sec: 5.0,
        action_ratio: 0.3,
        gaze_hz: 60,
        request_every: Some(Duration::from_secs(7)),
    };
    let done = AtomicBool::new(false);
    let (driven, operator) = std::thread::scope(|scope| {
        let op = scope.spawn(|| {
            // the wizard's side: answer requests, send general help, undo
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let (mut activations, mut generals_sent, mut undos, mut refused) = (0u64, 0u64, 0u64, 0u64);
            let mut answered = None;
            while !done.load(Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(rng.gen_range(1500..3500)));
                let Ok(snap) = wizard.snapshot() else { break };
                let pending = snap.pending_request.filter(|p| Some(p.seq) != answered && !p.suggestions.is_empty());
                let result = match pending {
                    Some(p) => {
                        answered = Some(p.seq);
                        activations += 1;
                        wizard.activate(&p.suggestions[0].message_id)
                    }
                    None if rng.gen_bool(0.5) => {
                        undos += 1;
                        wizard.send_undo(rng.gen_range(1..=3))
                    }
                    None => {
                        generals_sent += 1;
                        wizard.send_general(generals.choose(&mut rng).expect("general messages"))
                    }
                };
                refused += u64::from(result.is_err());
            }
            (activations, generals_sent, undos, refused)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let driven = drive(&agent, &driver, &mut rng, &AtomicBool::new(false));
        done.store(true, Ordering::Relaxed);
        (driven, op.join().expect("operator thread"))
    });
    let driven = driven.map_err(|e| e.to_string())?;

    let sent = wizard.snapshot().map_err(|e| e.to_string())?.commands_sent;
    let deadline = Instant::now() + Duration::from_secs(10);
    while agent.stats().commands_applied < sent && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    let host_state = agent.host_state();
    let summary = agent.stop().map_err(|e| e.to_string())?;
    wizard.shutdown();

    let report = validate_session(&session).map_err(|e| e.to_string())?;
    check(report.is_empty(), format!("validate_session:\n{report}"))?;
    check(driven.gaze_rejected == 0, format!("{} gaze samples rejected", driven.gaze_rejected))?;

    let commands = |records: &[TraceRecord]| -> Vec<(WizardCommandKind, String)> {
        records
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::WizardCommand(c) => Some((c.command, c.arg.clone())),
                _ => None,
            })
            .collect()
    };
    let subject_log = read_log(&session.join(EVENTS_FILE));
    let wizard_cmds = commands(&read_log(&action_log));
    let subject_cmds = commands(&subject_log);
    check(
        wizard_cmds == subject_cmds && wizard_cmds.len() as u64 == sent,
        format!("wizard sent {} commands, logged {}, subject logged {}", sent, wizard_cmds.len(), subject_cmds.len()),
    )?;

    let mut model = oracles::StackModel::default();
    for r in &subject_log {
        match &r.payload {
            Payload::UserEvent(e) if e.action == UserAction::KeyPress => model.apply(&e.detail),
            Payload::WizardCommand(c) if c.command == WizardCommandKind::Undo => {
                let n = c.undo_count().expect("undo count");
                let k = model.undo(n as usize) as u32;
                check(c.clamped_to.unwrap_or(n) == k, format!("undo {n} at seq {} clamped to {:?}, model undid {k}", r.seq, c.clamped_to))?;
            }
            _ => {}
        }
    }
    check(state_id_of(&model.actions) == host_state, "host state differs from the stack oracle")?;

    let (activations, generals_sent, undos, refused) = operator;
    *keep = Some(Soak { _tmp: tmp, session });
    Ok(format!(
        "{secs} s: {} records, {} events, {} actions, {} gaze rows, {} requests; {activations} activations, {generals_sent} general, {undos} undos ({refused} refused); logs reconcile on {} commands",
        summary.total_records(),
        driven.events,
        driven.actions,
        summary.gaze_rows,
        driven.requests,
        wizard_cmds.len()
    ))
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn replay_check(soak: Option<&Soak>) -> Verdict {
    let soak = soak.ok_or("no soak session to replay")?;
    let params = FixationParams::default();
    let tl = replay::load(&soak.session, &params).map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().unwrap();
    let (a, b) = (out.path().join("a"), out.path().join("b"));
    let fps = 5;
    let sa = replay::export(&tl, fps, &a).map_err(|e| e.to_string())?;
    let again = replay::load(&soak.session, &params).map_err(|e| e.to_string())?;
    replay::export(&again, fps, &b).map_err(|e| e.to_string())?;
    check(tree_bytes(&a) == tree_bytes(&b), "the two exports differ")?;

    let t_max = tl.t_max().0 as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points: Vec<i64> = (0..1000).map(|_| rng.gen_range(-1_000_000..=t_max + 1_000_000)).collect();
    for &t in &points {
        check(tl.step(t, None) == tl.seek(t), format!("seek({t}) differs from step"))?;
    }
    points.sort_unstable();
    let mut since = None;
    for &t in &points {
        let r = tl.step(t, since);
        check(r == tl.seek_since(t, since), format!("seek_since({t}, {since:?}) differs from step"))?;
        since = Some(r.t);
    }
    Ok(format!(
        "two exports of {} frames byte-identical; 1000 random and 1000 sequential seek/step points agree",
        sa.frames_written
    ))
}

fn main() {
    let soak_secs: u64 = std::env::var("OZFORGE_SOAK_SECS").ok().and_then(|v| v.parse().ok()).unwrap_or(600);
    let mut kept = None;
    let mut failed = 0;
    let mut report = |name: &str, budget: Option<u64>, run: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let verdict = run();
        let secs = start.elapsed().as_secs_f64();
        let verdict = match (verdict, budget) {
            (Ok(d), Some(b)) if secs > b as f64 => Err(format!("{d}; took {secs:.1} s, budget {b} s")),
            (v, _) => v,
        };
        let budget = budget.map(|b| format!(", budget {b} s")).unwrap_or_default();
        match verdict {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1} s{budget}]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1} s{budget}]");
            }
        }
    };
    report("throughput floor", Some(90), &mut throughput);
    report("gaze fidelity", Some(60), &mut gaze);
    report("lossy-channel correctness", Some(30), &mut lossy);
    report("filter equivalence and latency", None, &mut filter);
    report("soak", None, &mut || soak(soak_secs, &mut kept));
    report("replay determinism", None, &mut || replay_check(kept.as_ref()));
    if failed > 0 {
        std::process::exit(1);
    }
}
