#[path = "support/oracles.rs"]
mod oracles;

use std::fs;
use std::sync::Arc;

use ozforge_core::clock::ManualClock;
use ozforge_core::frames::SyntheticFrames;
use ozforge_core::recorder::{self, RecorderConfig};
use ozforge_core::trace::*;
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_ /é\"\\\\\\n-]{1,12}"
}

fn arb_payload() -> impl Strategy<Value = Payload> {
    let user = (0u8..3, 0u32..4096, 0u32..4096, text()).prop_map(|(a, x, y, d)| {
        let action = [UserAction::MouseMove, UserAction::MouseClick, UserAction::KeyPress][a as usize];
        let detail = if action == UserAction::MouseMove { String::new() } else { d };
        Payload::UserEvent(UserEventPayload { action, cursor_x: x, cursor_y: y, detail })
    });
    let system = (0u8..4, text()).prop_map(|(a, target)| {
        let action =
            [SystemAction::WindowMoved, SystemAction::MenuOpened, SystemAction::DialogOpened, SystemAction::WindowClosed]
                [a as usize];
        Payload::SystemEvent(SystemEventPayload { action, target })
    });
    let auto = (50u32..100_000).prop_map(|period_ms| Payload::AutoEvent(AutoEventPayload { period_ms }));
    let frame = (0u64..1 << 40, 1u32..8000, 1u32..8000, any::<u64>()).prop_map(|(s, w, h, len)| {
        Payload::FrameRef(FrameRefPayload { frame_seq: s, file: frame_file_name(s), width: w, height: h, byte_len: len })
    });
    let utt = (0u32..10_000, prop::option::of(1u32..1_000_000))
        .prop_map(|(i, d)| Payload::UtteranceRef(UtteranceRefPayload { file: utterance_file_name(i), duration_ms: d }));
    let gaze = (1u32..=1000).prop_map(|rate_hz| Payload::GazeRef(GazeRefPayload { file: GAZE_FILE.into(), rate_hz }));
    let help = (0usize..4, any::<bool>(), "[a-z]{1,6}(/[a-z]{1,6}){0,3}").prop_map(|(t, widget, id)| {
        let kind = if widget { ObjectKind::Widget } else { ObjectKind::Lexicon };
        Payload::HelpRequest(HelpRequestPayload::new(RequestType::ALL[t], kind, id))
    });
    let act = (text(), any::<bool>())
        .prop_map(|(message_id, general)| Payload::MessageActivation(MessageActivationPayload { message_id, general }));
    let cmd = prop_oneof![
        (1u32..100, prop::option::of(0u32..100)).prop_map(|(n, c)| {
            let mut p = WizardCommandPayload::undo(n);
            p.clamped_to = c;
            Payload::WizardCommand(p)
        }),
        text().prop_map(|id| Payload::WizardCommand(WizardCommandPayload::activate(id))),
        text().prop_map(|id| Payload::WizardCommand(WizardCommandPayload::general(id))),
    ];
    let cue = (text(), 0u8..3, text(), any::<bool>()).prop_map(|(message_id, k, src, start)| {
        Payload::PlaybackCue(PlaybackCuePayload {
            message_id,
            cue_kind: [CueKind::Audio, CueKind::Text, CueKind::Animation][k as usize],
            src,
            phase: if start { CuePhase::Start } else { CuePhase::End },
        })
    });
    prop_oneof![user, system, auto, frame, utt, gaze, help, act, cmd, cue]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn records_round_trip_bit_identically(seq in any::<u64>(), t in any::<u64>(), payload in arb_payload()) {
        let record = TraceRecord { seq, t: Timestamp(t), payload };
        let line = encode_record(&record);
        prop_assert!(!line.contains('\n'));
        let back = decode_record(&line).unwrap();
        prop_assert_eq!(&back, &record);
        prop_assert_eq!(encode_record(&back), line);
    }
}

#[test]
fn field_order_is_fixed() {
    let r = TraceRecord {
        seq: 3,
        t: Timestamp(17),
        payload: Payload::UserEvent(UserEventPayload {
            action: UserAction::MouseClick,
            cursor_x: 512,
            cursor_y: 384,
            detail: "left".into(),
        }),
    };
    assert_eq!(
        encode_record(&r),
        r#"{"seq":3,"t_us":17,"kind":"UserEvent","payload":{"action":"mouse_click","cursor_x":512,"cursor_y":384,"detail":"left"}}"#
    );
}

/// Records a short session with a manual clock: a few events, one idle
/// capture, gaze and an utterance.
fn record_session(dir: &std::path::Path) {
    let clock = ManualClock::new();
    let mut config = RecorderConfig::new(SyntheticFrames::new(64, 48, 0));
    config.tick = None;
    config.clock = Arc::new(clock.clone());
    let rec = recorder::start(config, dir, SessionMeta::new(9, "s")).unwrap();
    for k in 0..8u32 {
        clock.set(u64::from(k) * 150_000);
        rec.submit_event(Payload::UserEvent(UserEventPayload {
            action: UserAction::MouseClick,
            cursor_x: k * 10,
            cursor_y: 5,
            detail: "left".into(),
        }))
        .unwrap();
        rec.submit_gaze(ozforge_core::gaze::GazeSample::new(u64::from(k) * 150_000, 3, 4, true)).unwrap();
    }
    clock.set(2_000_000);
    rec.tick_auto_capture(Timestamp(2_000_000)).unwrap();
    let u = rec.begin_utterance().unwrap();
    clock.set(2_100_000);
    rec.end_utterance(u, &ozforge_core::wav::tone(8000, 100, 440.0)).unwrap();
    rec.stop().unwrap();
}

fn event_lines(dir: &std::path::Path) -> Vec<String> {
    fs::read_to_string(dir.join(EVENTS_FILE)).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn fresh_session_validates_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    record_session(dir.path());
    let report = validate_session(dir.path()).unwrap();
    assert!(report.is_empty(), "{report}");
    assert!(report.warnings.is_empty());
}

#[test]
fn deleted_frame_is_the_only_dangling_ref() {
    let dir = tempfile::tempdir().unwrap();
    record_session(dir.path());
    let victim = frame_file_name(3);
    fs::remove_file(dir.path().join(&victim)).unwrap();
    let report = validate_session(dir.path()).unwrap();
    assert_eq!(report.issues.len(), 1, "{report}");
    assert!(matches!(&report.issues[0], Issue::DanglingRef { file, .. } if *file == victim));
}

#[test]
fn swapped_lines_are_counted_like_a_brute_force_scan() {
    let base = tempfile::tempdir().unwrap();
    record_session(base.path());
    let lines = event_lines(base.path());
    let n = lines.len();
    for (a, b) in [(2, 3), (0, 1), (1, 7), (n - 2, n - 1), (4, n - 1)] {
        let dir = tempfile::tempdir().unwrap();
        record_session(dir.path());
        let mut mutated = lines.clone();
        mutated.swap(a, b);
        fs::write(dir.path().join(EVENTS_FILE), mutated.join("\n") + "\n").unwrap();
        let refs: Vec<&str> = mutated.iter().map(String::as_str).collect();
        let expected = oracles::order_regressions(&refs);
        let report = validate_session(dir.path()).unwrap();
        assert_eq!(report.order_regressions(), expected, "swap {a},{b}: {report}");
        if b == a + 1 {
            assert_eq!(expected, 1);
        }
    }
}

#[test]
fn empty_utterance_is_only_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new();
    let mut config = RecorderConfig::new(SyntheticFrames::new(32, 32, 0));
    config.tick = None;
    config.clock = Arc::new(clock.clone());
    let rec = recorder::start(config, dir.path(), SessionMeta::new(1, "s")).unwrap();
    let u = rec.begin_utterance().unwrap();
    rec.end_utterance(u, &[]).unwrap();
    rec.stop().unwrap();
    let report = validate_session(dir.path()).unwrap();
    assert!(report.is_empty(), "{report}");
    assert_eq!(report.warnings.len(), 1);
}

#[test]
fn garbage_line_is_reported_by_line_number() {
    let dir = tempfile::tempdir().unwrap();
    record_session(dir.path());
    let mut lines = event_lines(dir.path());
    lines.insert(2, "{not json".into());
    fs::write(dir.path().join(EVENTS_FILE), lines.join("\n") + "\n").unwrap();
    let report = validate_session(dir.path()).unwrap();
    assert!(report.issues.iter().any(|i| matches!(i, Issue::MalformedLine { line: 3, .. })), "{report}");
}
