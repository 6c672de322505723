//! End-to-end runs of every subcommand through the built binary.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::net::{TcpListener, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ozforge_core::trace::{decode_record, Payload, EVENTS_FILE};
use ozforge_core::wire::OVERHEAD;
use serde_json::Value;

fn ozforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ozforge")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixtures(dir: &Path, name: &str, seed: &str) -> (PathBuf, Value) {
    let out = dir.join(name);
    let v = json(&ozforge(&[
        "gen-fixtures", "--out", s(&out), "--messages", "40", "--session-secs", "2", "--seed", seed,
    ]));
    (out, v)
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn free_port() -> u16 {
    let tcp = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = tcp.local_addr().unwrap().port();
    // the frame port must be free for UDP as well
    UdpSocket::bind(("127.0.0.1", port)).map(|_| port).unwrap_or_else(|_| free_port())
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ozforge(&[]).status.code(), Some(2));
    assert_eq!(ozforge(&["frobnicate"]).status.code(), Some(2));
    let no_wizard = ozforge(&["subject", "--store", "x", "--session", "y"]);
    assert_eq!(no_wizard.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_wizard.stderr).contains("--wizard"));
    assert_eq!(ozforge(&["bench", "--frames", "many"]).status.code(), Some(2));
    assert_eq!(ozforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_fixtures_is_deterministic_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, v) = fixtures(tmp.path(), "a", "7");
    let (b, _) = fixtures(tmp.path(), "b", "7");
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    let (c, _) = fixtures(tmp.path(), "c", "8");
    assert_ne!(tree_bytes(&a), tree_bytes(&c));

    let session = v["session"].as_str().unwrap();
    let ok = ozforge(&["validate", session]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let store = ozforge(&["validate", "--store", v["store"].as_str().unwrap()]);
    assert_eq!(store.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&store.stdout).trim(), "ok: 40 messages");

    let again = ozforge(&["gen-fixtures", "--out", s(&a)]);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn validate_reports_a_broken_session() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, v) = fixtures(tmp.path(), "fx", "3");
    let session = PathBuf::from(v["session"].as_str().unwrap());
    let log = session.join(EVENTS_FILE);
    let mut lines: Vec<String> = std::fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    lines.swap(2, 3);
    lines.push("{not json".into());
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();

    let out = ozforge(&["validate", s(&session)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().filter(|l| l.starts_with("error: ")).count() >= 2, "{stderr}");

    std::fs::remove_file(Path::new(v["store"].as_str().unwrap()).join("lexicon.json")).unwrap();
    let bad_store = ozforge(&["validate", "--store", v["store"].as_str().unwrap()]);
    assert_eq!(bad_store.status.code(), Some(1));
    assert!(!bad_store.stderr.is_empty());
}

#[test]
fn offline_subject_records_a_valid_session() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, v) = fixtures(tmp.path(), "fx", "1");
    let session = tmp.path().join("offline");
    let out = json(&ozforge(&[
        "subject", "--offline", "--store", v["store"].as_str().unwrap(), "--session", s(&session),
        "--duration", "1.5", "--events-per-sec", "20", "--gaze-hz", "60", "--request-every", "0.5",
        "--width", "320", "--height", "240", "--seed", "5",
    ]));
    assert_eq!(out["online"], false);
    assert!(out["driver"]["events"].as_u64().unwrap() >= 20);
    assert_eq!(out["driver"]["requests"], 2);
    assert!(out["gaze_rows"].as_u64().unwrap() >= 60);
    assert_eq!(ozforge(&["validate", s(&session)]).status.code(), Some(0));

    let meta: Value = serde_json::from_slice(&std::fs::read(session.join("session.json")).unwrap()).unwrap();
    assert_eq!(meta["config_snapshot"]["seed"], "5");
    assert_eq!(meta["config_snapshot"]["gaze_hz"], "60");
}

#[test]
fn subject_streams_to_a_wizard_process() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, v) = fixtures(tmp.path(), "fx", "2");
    let (fp, cp, up) = (free_port(), free_port(), free_port());
    let log = tmp.path().join("wizard.jsonl");
    let mut wizard = Command::new(env!("CARGO_BIN_EXE_ozforge"))
        .args([
            "wizard", "--mirror", v["mirror"].as_str().unwrap(), "--bind", "127.0.0.1",
            "--frame-port", &fp.to_string(), "--control-port", &cp.to_string(), "--ui-port", &up.to_string(),
            "--log", s(&log), "--duration", "6",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut docs = serde_json::Deserializer::from_reader(wizard.stdout.take().unwrap()).into_iter::<Value>();
    let addrs = docs.next().unwrap().unwrap();
    assert_eq!(addrs["control_addr"], format!("127.0.0.1:{cp}"));

    let session = tmp.path().join("online");
    let out = json(&ozforge(&[
        "subject", "--wizard", &format!("127.0.0.1:{cp}"), "--frame-port", &fp.to_string(),
        "--store", v["store"].as_str().unwrap(), "--session", s(&session),
        "--duration", "2", "--events-per-sec", "10", "--request-every", "0.5", "--width", "320", "--height", "240",
    ]));
    assert_eq!(out["online"], true);
    assert!(out["frames_sent"].as_u64().unwrap() > 0);

    let summary = docs.next().unwrap().unwrap();
    assert!(wizard.wait().unwrap().success());
    assert_eq!(summary["requests_received"], 3);
    assert_eq!(summary["events_received"], out["events_forwarded"]);
    assert!(summary["link"]["frames_delivered"].as_u64().unwrap() > 0);

    let requests = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .filter(|l| matches!(decode_record(l).unwrap().payload, Payload::HelpRequest(_)))
        .count();
    assert_eq!(requests, 3);
    assert_eq!(ozforge(&["validate", s(&session)]).status.code(), Some(0));
}

#[test]
fn replay_export_and_alias_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, v) = fixtures(tmp.path(), "fx", "4");
    let session = v["session"].as_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = json(&ozforge(&["replay", "export", "--session", session, "--out", s(&a), "--fps", "5"]));
    let rb = json(&ozforge(&["export", "--session", session, "--out", s(&b), "--fps", "5", "--dispersion", "40", "--min-dur", "100"]));
    assert_eq!(ra["frames_written"], rb["frames_written"]);
    assert!(ra["frames_written"].as_u64().unwrap() >= 10);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));

    let seek = json(&ozforge(&["replay", "seek", "--session", session, "--t-us", "1000000"]));
    assert_eq!(seek["t"], 1_000_000);
    assert!(seek["frame"].is_object());
    let clamped = json(&ozforge(&["replay", "seek", "--session", session, "--t-us", "-5"]));
    assert_eq!(clamped["t"], 0);

    let bad = ozforge(&["replay", "export", "--session", session, "--out", s(&tmp.path().join("c")), "--fps", "0"]);
    assert_eq!(bad.status.code(), Some(1));
}

fn bench(args: &[&str]) -> Value {
    let mut all = vec!["bench", "--fps", "100", "--request-every", "20"];
    all.extend_from_slice(args);
    json(&ozforge(&all))
}

#[test]
fn bench_without_loss_delivers_everything() {
    let r = bench(&["--frames", "100", "--size", "20000"]);
    assert_eq!(r["frames_sent"], 100);
    assert_eq!(r["frames_delivered"], r["frames_sent"]);
    assert_eq!(r["datagrams_delivered"], r["datagrams_sent"]);
    assert_eq!(r["datagrams_dropped"], 0);
    assert_eq!(r["events_received"], r["events_sent"]);
    assert_eq!(r["control_round_trips"], 5);
    assert_eq!(r["event_order_violations"], 0);
    assert!(r["latency_p50_ms"].as_f64().unwrap() >= 0.0);
    assert!(r["latency_p99_ms"].as_f64().unwrap() >= r["latency_p50_ms"].as_f64().unwrap());
}

#[test]
fn bench_drop_count_follows_the_seed() {
    let (frames, size, loss, seed) = (300usize, 20_000usize, 0.05, 42u64);
    let args = ["--frames", "300", "--size", "20000", "--loss", "0.05", "--seed", "42"];
    let r = bench(&args);
    assert_eq!(r["frames_queue_dropped"], 0);
    assert_eq!(r["frames_rate_limited"], 0);

    let chunks = size.div_ceil(1400 - OVERHEAD);
    let drops = oracles::seeded_drops(seed, loss, frames * chunks);
    let intact: Vec<bool> = drops.chunks(chunks).map(|c| !c.contains(&true)).collect();
    let last_intact = intact.iter().rposition(|&i| i).unwrap();
    let partial = oracles::partially_lost_frames(&vec![chunks; last_intact + 1], &drops[..(last_intact + 1) * chunks]);

    assert_eq!(r["datagrams_sent"], (frames * chunks) as u64);
    assert_eq!(r["datagrams_dropped"], drops.iter().filter(|d| **d).count() as u64);
    assert_eq!(r["frames_delivered"], intact.iter().filter(|i| **i).count() as u64);
    assert_eq!(r["frames_dropped_incomplete"], partial as u64);
    assert_eq!(r["events_received"], r["events_sent"]);

    let again = bench(&args);
    for key in ["datagrams_dropped", "frames_delivered", "frames_dropped_incomplete"] {
        assert_eq!(r[key], again[key], "{key}");
    }
}
